use crate::autodiff::{BatchStats, Graph, Var};
use crate::error::{ensure, Result};
use crate::nn::{LayerMode, Parameter};
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Batch-normalization scale/shift plus running statistics.
///
/// The running statistics are model state but not trainable; they move by an
/// exponential moving average each time [`BnParams::update_running`] is fed
/// the statistics of a training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BnParams {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Parameter,
    pub running_var: Parameter,
    pub momentum: f64,
    pub eps: f64,
}

impl BnParams {
    pub fn init(prefix: &str, channels: usize) -> Self {
        Self {
            gamma: Parameter::new(format!("{prefix}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: Parameter::new(format!("{prefix}.beta"), Tensor::zeros(&[channels])),
            running_mean: Parameter::new(format!("{prefix}.running_mean"), Tensor::zeros(&[channels])),
            running_var: Parameter::new(format!("{prefix}.running_var"), Tensor::full(&[channels], 1.0)),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn update_running(&mut self, stats: &BatchStats) -> Result<()> {
        ensure!(
            stats.mean.len() == self.channels() && stats.var.len() == self.channels(),
            "batch statistics have the wrong channel count"
        );
        let m = self.momentum;
        for (r, s) in self.running_mean.value.data_mut().iter_mut().zip(&stats.mean) {
            *r = m * *r + (1.0 - m) * s;
        }
        for (r, s) in self.running_var.value.data_mut().iter_mut().zip(&stats.var) {
            *r = (m * *r + (1.0 - m) * s).max(0.0);
        }
        Ok(())
    }
}

/// Normalizes per channel (last axis). Train mode uses statistics over every
/// batch and sequence position and returns them for the running update;
/// Infer mode uses the running statistics only.
pub fn batch_norm(g: &mut Graph, x: Var, p: &BnParams, mode: LayerMode) -> Result<(Var, Option<BatchStats>)> {
    let gamma = p.gamma.bind(g);
    let beta = p.beta.bind(g);
    match mode {
        LayerMode::Train => {
            let (y, stats) = g.batch_norm_train(x, gamma, beta, p.eps)?;
            Ok((y, Some(stats)))
        }
        LayerMode::Infer => {
            let y = g.batch_norm_infer(
                x,
                gamma,
                beta,
                p.running_mean.value.data(),
                p.running_var.value.data(),
                p.eps,
            )?;
            Ok((y, None))
        }
    }
}
