use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{contract, ensure, Result};
use crate::nn::{dropout_mask, glorot_uniform, Parameter};
use crate::tensor::Tensor;

/// Gated recurrent unit weights. Input matrices are (input x hidden),
/// recurrent matrices (hidden x hidden), biases (hidden).
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_z: Parameter,
    pub w_r: Parameter,
    pub w_h: Parameter,
    pub u_z: Parameter,
    pub u_r: Parameter,
    pub u_h: Parameter,
    pub b_z: Parameter,
    pub b_r: Parameter,
    pub b_h: Parameter,
}

impl GruParams {
    pub fn init<R: Rng + ?Sized>(prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut w = |name: &str| {
            Parameter::new(
                format!("{prefix}.{name}"),
                glorot_uniform(&[input, hidden], input, hidden, rng),
            )
        };
        let (w_z, w_r, w_h) = (w("W_z"), w("W_r"), w("W_h"));
        let mut u = |name: &str| {
            Parameter::new(
                format!("{prefix}.{name}"),
                glorot_uniform(&[hidden, hidden], hidden, hidden, rng),
            )
        };
        let (u_z, u_r, u_h) = (u("U_z"), u("U_r"), u("U_h"));
        let b = |name: &str| Parameter::new(format!("{prefix}.{name}"), Tensor::zeros(&[hidden]));
        Self {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z: b("b_z"),
            b_r: b("b_r"),
            b_h: b("b_h"),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.value.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.w_z.value.shape()[1]
    }

    pub fn params(&self) -> [&Parameter; 9] {
        [
            &self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z, &self.b_r,
            &self.b_h,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    fn validate(&self) -> Result<()> {
        let (d, h) = (self.input_dim(), self.hidden());
        for w in [&self.w_z, &self.w_r, &self.w_h] {
            ensure!(w.value.shape() == [d, h], "{}: expected {d}x{h}", w.name);
        }
        for u in [&self.u_z, &self.u_r, &self.u_h] {
            ensure!(u.value.shape() == [h, h], "{}: expected {h}x{h}", u.name);
        }
        for b in [&self.b_z, &self.b_r, &self.b_h] {
            ensure!(b.value.shape() == [h], "{}: expected {h} entries", b.name);
        }
        Ok(())
    }
}

/// Dropout masks frozen for a whole sequence: `input` scales every `x_t`,
/// `recurrent` scales `h_{t-1}` wherever it enters a gate through a
/// recurrent matrix.
#[derive(Clone, Debug)]
pub struct GruDropout {
    pub input: Tensor,
    pub recurrent: Tensor,
}

impl GruDropout {
    pub fn sample<R: Rng + ?Sized>(batch: usize, input: usize, hidden: usize, p: f64, rng: &mut R) -> Result<Self> {
        Ok(Self {
            input: dropout_mask(&[batch, input], p, rng)?,
            recurrent: dropout_mask(&[batch, hidden], p, rng)?,
        })
    }
}

pub struct GruOutput {
    /// State after visiting each position, indexed by position.
    pub states: Var,
    /// State after the last visited position.
    pub last: Var,
}

/// Runs a GRU over `x` (batch x seq x input, or seq x input with `h0` of shape
/// (hidden)). With `reversed` the sequence is visited from the end.
///
/// ```text
/// z = σ(x W_z + h U_z + b_z)
/// r = σ(x W_r + h U_r + b_r)
/// ĥ = tanh(x W_h + (r ⊙ h) U_h + b_h)
/// h' = (1 - z) ⊙ h + z ⊙ ĥ
/// ```
pub fn gru_sequence(
    g: &mut Graph,
    x: Var,
    p: &GruParams,
    h0: Var,
    reversed: bool,
    dropout: Option<&GruDropout>,
) -> Result<GruOutput> {
    p.validate()?;
    let hidden = p.hidden();
    let xshape = g.shape(x).to_vec();
    let unbatched = xshape.len() == 2;
    let (x, h0) = if unbatched {
        ensure!(
            g.shape(h0) == [hidden],
            "gru: initial state must have {hidden} entries, got {:?}",
            g.shape(h0)
        );
        (
            g.reshape(x, &[1, xshape[0], xshape[1]])?,
            g.reshape(h0, &[1, hidden])?,
        )
    } else {
        (x, h0)
    };
    let shape = g.shape(x).to_vec();
    let [batch, steps, input] = shape[..] else {
        return Err(contract!("gru: expected (batch x seq x input), got {shape:?}"));
    };
    ensure!(
        input == p.input_dim(),
        "gru: input has {input} features but weights expect {}",
        p.input_dim()
    );
    ensure!(
        g.shape(h0) == [batch, hidden],
        "gru: initial state must be {batch}x{hidden}, got {:?}",
        g.shape(h0)
    );

    let x = match dropout {
        Some(d) => {
            ensure!(d.input.shape() == [batch, input], "gru: input mask has wrong shape");
            let mut full = Vec::with_capacity(batch * steps * input);
            for b in 0..batch {
                for _ in 0..steps {
                    full.extend_from_slice(d.input.row(b));
                }
            }
            g.mul_const(x, Tensor::new(&[batch, steps, input], full)?)?
        }
        None => x,
    };
    let project = |g: &mut Graph, w: &Parameter, b: &Parameter| -> Result<Var> {
        let (w, b) = (w.bind(g), b.bind(g));
        let xw = g.matmul(x, w)?;
        g.add_bias(xw, b)
    };
    let pz = project(g, &p.w_z, &p.b_z)?;
    let pr = project(g, &p.w_r, &p.b_r)?;
    let ph = project(g, &p.w_h, &p.b_h)?;
    let (uz, ur, uh) = (p.u_z.bind(g), p.u_r.bind(g), p.u_h.bind(g));

    let order: Vec<usize> = if reversed {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    let mut h = h0;
    let mut states = vec![h0; steps];
    for t in order {
        let hm = match dropout {
            Some(d) => g.mul_const(h, d.recurrent.clone())?,
            None => h,
        };
        let xz = g.select_step(pz, t)?;
        let xr = g.select_step(pr, t)?;
        let xh = g.select_step(ph, t)?;

        let hz = g.matmul(hm, uz)?;
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z);

        let hr = g.matmul(hm, ur)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r);

        let rh = g.mul(r, hm)?;
        let hc = g.matmul(rh, uh)?;
        let cand = g.add(xh, hc)?;
        let cand = g.tanh(cand);

        let keep = g.one_minus(z);
        let kept = g.mul(keep, h)?;
        let fresh = g.mul(z, cand)?;
        h = g.add(kept, fresh)?;
        states[t] = h;
    }
    let mut all = g.stack_steps(&states)?;
    if unbatched {
        all = g.reshape(all, &[steps, hidden])?;
        h = g.reshape(h, &[hidden])?;
    }
    Ok(GruOutput { states: all, last: h })
}

/// Concatenated final states of a forward and a backward GRU pass, both
/// started from zero.
pub fn bigru_encode(
    g: &mut Graph,
    x: Var,
    fw: &GruParams,
    bw: &GruParams,
    dropout: Option<(&GruDropout, &GruDropout)>,
) -> Result<Var> {
    ensure!(
        fw.hidden() == bw.hidden(),
        "bi-GRU: forward hidden size {} differs from backward {}",
        fw.hidden(),
        bw.hidden()
    );
    let hidden = fw.hidden();
    let shape = g.shape(x).to_vec();
    let h0_shape: Vec<usize> = if shape.len() == 2 {
        vec![hidden]
    } else {
        vec![shape[0], hidden]
    };
    let h0 = g.constant(Tensor::zeros(&h0_shape));
    let forward = gru_sequence(g, x, fw, h0, false, dropout.map(|d| d.0))?;
    let backward = gru_sequence(g, x, bw, h0, true, dropout.map(|d| d.1))?;
    g.concat(forward.last, backward.last)
}
