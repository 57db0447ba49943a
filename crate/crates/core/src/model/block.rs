use rand::Rng;

use crate::autodiff::{BatchStats, Graph, Var};
use crate::error::{Error, Result};
use crate::model::MergeMode;
use crate::nn::{batch_norm, conv1d_same, dropout, BnParams, ConvParams, LayerMode, Parameter};

/// One residual block:
///
/// ```text
/// BN -> ReLU -> Dropout -> Conv(window 8)
/// BN -> ReLU -> Dropout -> Conv(window 4)
/// Merge with the block input -> MaxPool(2)
/// ```
///
/// The normalization and activation sit on the residual branch only; the
/// shortcut carries the block input unchanged into the merge.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlockParams {
    pub bn1: BnParams,
    pub conv1: ConvParams,
    pub bn2: BnParams,
    pub conv2: ConvParams,
}

impl ResidualBlockParams {
    pub fn init<R: Rng + ?Sized>(
        prefix: &str,
        c_in: usize,
        filters: usize,
        windows: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let conv1 = ConvParams::init(&format!("{prefix}.conv1"), windows.0, c_in, filters, rng);
        let conv2 = ConvParams::init(&format!("{prefix}.conv2"), windows.1, filters, filters, rng);
        Self {
            bn1: BnParams::init(&format!("{prefix}.bn1"), c_in),
            conv1,
            bn2: BnParams::init(&format!("{prefix}.bn2"), filters),
            conv2,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.bn1.channels()
    }

    pub fn out_channels(&self, merge: MergeMode) -> usize {
        match merge {
            MergeMode::Concat => self.in_channels() + self.conv2.out_channels(),
            MergeMode::Add => self.in_channels(),
        }
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![
            &self.bn1.gamma,
            &self.bn1.beta,
            &self.bn1.running_mean,
            &self.bn1.running_var,
            &self.conv1.w,
            &self.conv1.b,
            &self.bn2.gamma,
            &self.bn2.beta,
            &self.bn2.running_mean,
            &self.bn2.running_var,
            &self.conv2.w,
            &self.conv2.b,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.bn1.running_mean,
            &mut self.bn1.running_var,
            &mut self.conv1.w,
            &mut self.conv1.b,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.bn2.running_mean,
            &mut self.bn2.running_var,
            &mut self.conv2.w,
            &mut self.conv2.b,
        ]
    }
}

/// Output of [`residual_block`] before pooling is exposed for inspection.
pub struct BlockOutput {
    pub merged: Var,
    pub pooled: Var,
    /// Train-mode batch statistics of the two normalizations.
    pub stats: [Option<BatchStats>; 2],
}

/// Applies a residual block to `x` (batch x seq x c_in) and pools by `pool`.
#[allow(clippy::too_many_arguments)]
pub fn residual_block<R: Rng + ?Sized>(
    g: &mut Graph,
    x: Var,
    p: &ResidualBlockParams,
    mode: LayerMode,
    merge: MergeMode,
    drop_rate: f64,
    pool: usize,
    rng: &mut R,
) -> Result<BlockOutput> {
    let c_in = *g.shape(x).last().unwrap_or(&0);
    if merge == MergeMode::Add && p.conv2.out_channels() != c_in {
        return Err(Error::Config(format!(
            "add merge needs the residual branch to emit {c_in} channels, it emits {}",
            p.conv2.out_channels()
        )));
    }
    let (h, s1) = batch_norm(g, x, &p.bn1, mode)?;
    let h = g.relu(h);
    let h = dropout(g, h, drop_rate, mode, rng)?;
    let h = conv1d_same(g, h, &p.conv1)?;
    let (h, s2) = batch_norm(g, h, &p.bn2, mode)?;
    let h = g.relu(h);
    let h = dropout(g, h, drop_rate, mode, rng)?;
    let branch = conv1d_same(g, h, &p.conv2)?;
    let merged = match merge {
        MergeMode::Concat => g.concat(x, branch)?,
        MergeMode::Add => g.add(x, branch)?,
    };
    let pooled = g.max_pool1d(merged, pool)?;
    Ok(BlockOutput {
        merged,
        pooled,
        stats: [s1, s2],
    })
}
