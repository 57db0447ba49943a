//! Differentiable layers used by the byte-level residual network.
//!
//! Layers register their parameters in the caller's [`Graph`] by name (via
//! [`Parameter::bind`]), so a parameter used by several layers or time steps
//! appears exactly once and its gradient contributions are summed.

mod conv;
mod gru;
mod norm;

pub use conv::{conv1d_same, ConvParams};
pub use gru::{bigru_encode, gru_sequence, GruDropout, GruOutput, GruParams};
pub use norm::{batch_norm, BnParams, BN_EPS, BN_MOMENTUM};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{ensure, Result};
use crate::tensor::Tensor;

/// Switches dropout and batch normalization between training and inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerMode {
    Train,
    Infer,
}

/// A named tensor owned by a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
        }
    }

    /// Leaf for this parameter in `g`, registering it on first use.
    pub fn bind(&self, g: &mut Graph) -> Var {
        match g.param_var(&self.name) {
            Some(v) => v,
            None => g
                .param(&self.name, self.value.clone())
                .expect("name checked as unused"),
        }
    }
}

/// Glorot/Xavier uniform initializer.
pub fn glorot_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, -limit, limit, rng)
}

/// Looks up rows of `table` (vocab x d) for `ids`, producing `lead ++ [d]`.
/// Rows for `pad` are zero and never receive gradient.
pub fn embed(
    g: &mut Graph,
    table: &Parameter,
    ids: &[usize],
    lead: &[usize],
    pad: Option<usize>,
) -> Result<Var> {
    let t = table.bind(g);
    g.embed(t, ids, lead, pad)
}

/// Inverted dropout mask: each entry is 0 with probability `p`, otherwise
/// `1/(1-p)`.
pub fn dropout_mask<R: Rng + ?Sized>(shape: &[usize], p: f64, rng: &mut R) -> Result<Tensor> {
    ensure!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1), got {p}");
    let keep = 1.0 / (1.0 - p);
    let mut mask = Tensor::zeros(shape);
    for v in mask.data_mut() {
        *v = if rng.gen::<f64>() < p { 0.0 } else { keep };
    }
    Ok(mask)
}

pub fn dropout<R: Rng + ?Sized>(g: &mut Graph, x: Var, p: f64, mode: LayerMode, rng: &mut R) -> Result<Var> {
    ensure!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1), got {p}");
    if mode == LayerMode::Infer || p == 0.0 {
        return Ok(x);
    }
    let mask = dropout_mask(g.shape(x), p, rng)?;
    g.mul_const(x, mask)
}

pub fn max_pool1d(g: &mut Graph, x: Var, k: usize) -> Result<Var> {
    g.max_pool1d(x, k)
}

/// Dense layer weights: `w` is (in x out), `b` is (out).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub w: Parameter,
    pub b: Parameter,
}

impl DenseParams {
    pub fn init<R: Rng + ?Sized>(prefix: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            w: Parameter::new(
                format!("{prefix}.W"),
                glorot_uniform(&[inputs, outputs], inputs, outputs, rng),
            ),
            b: Parameter::new(format!("{prefix}.b"), Tensor::zeros(&[outputs])),
        }
    }
}

/// `softmax(v W + b)` over the last axis of `v`.
pub fn dense_softmax(g: &mut Graph, v: Var, p: &DenseParams) -> Result<Var> {
    let w = p.w.bind(g);
    let b = p.b.bind(g);
    let logits = g.matmul(v, w)?;
    let logits = g.add_bias(logits, b)?;
    Ok(g.softmax(logits))
}

/// Mean categorical cross-entropy of probability rows against gold indices.
pub fn cross_entropy(g: &mut Graph, probs: Var, golds: &[usize]) -> Result<Var> {
    g.nll_mean(probs, golds)
}
