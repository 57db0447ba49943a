use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// `|a - n| / max(|a|, |n|, 1e-12)`, or `+inf` if either estimate is NaN.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if analytic.is_nan() || numeric.is_nan() {
        return f64::INFINITY;
    }
    let denom = analytic.abs().max(numeric.abs()).max(1e-12);
    (analytic - numeric).abs() / denom
}

/// Compares reverse-mode gradients against central differences.
///
/// `build` receives a fresh graph plus one differentiable leaf per input and
/// returns the output node; non-scalar outputs are reduced by summation.
pub struct GradCheck<F> {
    build: F,
    eps: f64,
    analytic_scale: f64,
    names: Option<Vec<String>>,
}

impl<F> GradCheck<F>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    pub fn new(eps: f64, build: F) -> Self {
        assert!(eps > 0.0, "finite-difference step must be positive");
        Self {
            build,
            eps,
            analytic_scale: 1.0,
            names: None,
        }
    }

    /// Registers the inputs as named parameters, so layers that bind
    /// parameters by name pick up the perturbed values.
    pub fn with_names(mut self, names: Vec<String>) -> Self {
        self.names = Some(names);
        self
    }

    /// Multiplies every analytic gradient by `scale` before comparing. Only
    /// useful for exercising the harness itself with a known-bad gradient.
    pub fn with_analytic_scale(mut self, scale: f64) -> Self {
        self.analytic_scale = scale;
        self
    }

    fn eval(&self, inputs: &[Tensor]) -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = match &self.names {
            Some(names) => inputs
                .iter()
                .zip(names)
                .map(|(t, n)| g.param(n, t.clone()))
                .collect::<Result<_>>()?,
            None => inputs.iter().map(|t| g.input(t.clone())).collect(),
        };
        let mut out = (self.build)(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            out = g.sum(out);
        }
        Ok((g, vars, out))
    }

    fn scalar(&self, inputs: &[Tensor]) -> Result<f64> {
        let (g, _, out) = self.eval(inputs)?;
        Ok(g.value(out).data()[0])
    }

    /// Max relative error over every entry of every input.
    pub fn run(&self, inputs: &[Tensor]) -> Result<f64> {
        let (g, vars, out) = self.eval(inputs)?;
        let grads = g.backward(out)?;
        let mut worst = 0.0f64;
        let mut probe = inputs.to_vec();
        for (k, var) in vars.iter().enumerate() {
            let analytic = grads.get(*var).expect("input leaf").clone();
            for i in 0..inputs[k].len() {
                let orig = inputs[k].data()[i];
                probe[k].data_mut()[i] = orig + self.eps;
                let plus = self.scalar(&probe)?;
                probe[k].data_mut()[i] = orig - self.eps;
                let minus = self.scalar(&probe)?;
                probe[k].data_mut()[i] = orig;
                let numeric = (plus - minus) / (2.0 * self.eps);
                let err = relative_error(analytic.data()[i] * self.analytic_scale, numeric);
                if err.is_nan() {
                    return Ok(f64::INFINITY);
                }
                worst = worst.max(err);
            }
        }
        Ok(worst)
    }
}

/// Max relative error between analytic and central-difference gradients of
/// `sum(build(inputs))` with respect to all `inputs`.
pub fn finite_difference_check<F>(build: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    GradCheck::new(eps, build).run(inputs)
}
