use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a residual block joins its input with the residual branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    /// Channel concatenation of input and branch output.
    Concat,
    /// Elementwise sum; needs `conv_filters` equal to the block's input channels.
    Add,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_blocks: usize,
    /// Byte embedding dimension.
    pub d_b: usize,
    /// Output channels of both convolutions in a block.
    pub conv_filters: usize,
    /// Window sizes of the first and second convolution in a block.
    pub windows: (usize, usize),
    pub pool: usize,
    pub merge_mode: MergeMode,
    pub block_dropout: f64,
    pub gru_hidden: usize,
    pub gru_dropout: f64,
    pub n_classes: usize,
    /// Bytes kept per sentence; longer inputs are truncated, shorter ones padded.
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_blocks: 3,
            d_b: 64,
            conv_filters: 64,
            windows: (8, 4),
            pool: 2,
            merge_mode: MergeMode::Concat,
            block_dropout: 0.5,
            gru_hidden: 100,
            gru_dropout: 0.1,
            n_classes: 12,
            max_len: 384,
        }
    }
}

impl ModelConfig {
    /// Input channel count of block `i` (and of the GRU for `i == n_blocks`).
    pub fn block_channels(&self, i: usize) -> usize {
        match self.merge_mode {
            MergeMode::Concat => self.d_b + i * self.conv_filters,
            MergeMode::Add => self.d_b,
        }
    }

    pub fn gru_input(&self) -> usize {
        self.block_channels(self.n_blocks)
    }

    /// Sequence length seen by the GRU for inputs of `len` positions.
    pub fn pooled_len(&self, len: usize) -> usize {
        (0..self.n_blocks).fold(len, |l, _| l / self.pool.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_blocks == 0 {
            return fail("n_blocks must be at least 1".into());
        }
        for (name, v) in [
            ("d_b", self.d_b),
            ("conv_filters", self.conv_filters),
            ("windows.0", self.windows.0),
            ("windows.1", self.windows.1),
            ("pool", self.pool),
            ("gru_hidden", self.gru_hidden),
            ("n_classes", self.n_classes),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        for (name, p) in [("block_dropout", self.block_dropout), ("gru_dropout", self.gru_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("{name} must be in [0, 1), got {p}"));
            }
        }
        if self.pooled_len(self.max_len) == 0 {
            return fail(format!(
                "max_len {} is too short for {} pooling blocks of size {}",
                self.max_len, self.n_blocks, self.pool
            ));
        }
        if self.merge_mode == MergeMode::Add && self.conv_filters != self.d_b {
            return fail(format!(
                "add merge needs conv_filters ({}) equal to the block input channels ({})",
                self.conv_filters, self.d_b
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_channel_arithmetic() {
        let c = ModelConfig::default();
        assert_eq!(
            (0..=3).map(|i| c.block_channels(i)).collect::<Vec<_>>(),
            vec![64, 128, 192, 256]
        );
        assert_eq!(c.gru_input(), 256);
    }

    #[test]
    fn five_blocks_pool_384_to_12() {
        let c = ModelConfig {
            n_blocks: 5,
            ..Default::default()
        };
        assert_eq!(c.pooled_len(384), 12);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let short = ModelConfig {
            max_len: 7,
            ..Default::default()
        };
        assert!(matches!(short.validate(), Err(Error::Config(_))));
        let add = ModelConfig {
            merge_mode: MergeMode::Add,
            conv_filters: 32,
            ..Default::default()
        };
        assert!(add.validate().is_err());
        let ok = ModelConfig {
            merge_mode: MergeMode::Add,
            ..Default::default()
        };
        ok.validate().unwrap();
        assert_eq!(ok.gru_input(), 64);
    }

    #[test]
    fn json_field_names() {
        let v = serde_json::to_value(ModelConfig::default()).unwrap();
        assert_eq!(v["merge_mode"], "concat");
        assert_eq!(v["windows"], serde_json::json!([8, 4]));
        let back: ModelConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, ModelConfig::default());
    }
}
