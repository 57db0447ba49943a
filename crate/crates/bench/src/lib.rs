//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resident::{build_model, LabelVocab, Model, ModelConfig, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// `rows` sentences of random printable bytes, each `len` long.
pub fn byte_ids(rows: usize, len: usize, seed: u64) -> Vec<u16> {
    let mut r = rng(seed);
    (0..rows * len).map(|_| r.gen_range(32..127)).collect()
}

/// Default architecture with `n_blocks` blocks over 12 classes.
pub fn model(n_blocks: usize, max_len: usize) -> Model {
    let config = ModelConfig {
        n_blocks,
        max_len,
        ..ModelConfig::default()
    };
    let labels = LabelVocab::new((0..config.n_classes).map(|i| format!("l{i}")).collect()).expect("unique labels");
    build_model(&config, labels, 0).expect("valid config")
}
