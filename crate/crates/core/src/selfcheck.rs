//! Finite-difference checks of every differentiable component, from single
//! kernels up to a tiny end-to-end model.
//!
//! Each component builds a scalar from random inputs (raw outputs contracted
//! with fixed random weights, so no gradient is identically zero by
//! construction) and compares the engine's gradients with central
//! differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{GradCheck, Graph, Var};
use crate::data::{LabelVocab, BYTE_VOCAB, PAD_ID};
use crate::error::Result;
use crate::model::{build_model, residual_block, MergeMode, Model, ModelConfig, ResidualBlockParams};
use crate::nn::{
    batch_norm, bigru_encode, cross_entropy, dense_softmax, dropout, gru_sequence,
    BnParams, ConvParams, DenseParams, GruParams, LayerMode, Parameter,
};
use crate::tensor::Tensor;

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct ComponentResult {
    pub name: &'static str,
    pub max_relative_error: f64,
}

impl ComponentResult {
    pub fn passed(&self) -> bool {
        self.max_relative_error < GRADCHECK_TOLERANCE
    }
}

/// Names of the components, in the order [`gradient_suite`] reports them.
pub const COMPONENTS: [&str; 16] = [
    "elementwise",
    "matmul",
    "embed",
    "conv1d_same",
    "batch_norm_train",
    "batch_norm_infer",
    "dropout_frozen",
    "max_pool1d",
    "gru_sequence",
    "bigru_encode",
    "dense_softmax",
    "cross_entropy",
    "residual_block_concat",
    "residual_block_add",
    "model_infer",
    "model_train",
];

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// `sum(w ⊙ y)` with `w` fixed by `seed`.
fn contract(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let w = Tensor::uniform(g.shape(y), -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let wy = g.mul_const(y, w)?;
    Ok(g.sum(wy))
}

fn check<F>(inputs: &[Tensor], names: Option<Vec<String>>, scale: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut c = GradCheck::new(GRADCHECK_EPS, build).with_analytic_scale(scale);
    if let Some(n) = names {
        c = c.with_names(n);
    }
    c.run(inputs)
}

fn names_of(params: &[&Parameter]) -> Vec<String> {
    params.iter().map(|p| p.name.clone()).collect()
}

fn values_of(params: &[&Parameter]) -> Vec<Tensor> {
    params.iter().map(|p| p.value.clone()).collect()
}

fn random_gru(prefix: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> GruParams {
    let mut p = GruParams::init(prefix, input, hidden, rng);
    for b in [&mut p.b_z, &mut p.b_r, &mut p.b_h] {
        b.value = Tensor::uniform(b.value.shape(), -0.5, 0.5, rng);
    }
    p
}

fn tiny_model(seed: u64, merge: MergeMode, rng: &mut ChaCha8Rng) -> Result<Model> {
    let cfg = ModelConfig {
        n_blocks: 1,
        d_b: 4,
        conv_filters: 4,
        gru_hidden: 3,
        n_classes: 3,
        max_len: 16,
        merge_mode: merge,
        ..Default::default()
    };
    let labels = LabelVocab::from_labels(["a", "b", "c"]);
    let mut m = build_model(&cfg, labels, seed)?;
    for b in &mut m.blocks {
        for bn in [&mut b.bn1, &mut b.bn2] {
            bn.gamma.value = Tensor::uniform(bn.gamma.value.shape(), 0.5, 1.5, rng);
            bn.beta.value = Tensor::uniform(bn.beta.value.shape(), -0.5, 0.5, rng);
            bn.running_mean.value = Tensor::uniform(bn.running_mean.value.shape(), -0.2, 0.2, rng);
            bn.running_var.value = Tensor::uniform(bn.running_var.value.shape(), 0.5, 1.5, rng);
        }
        for c in [&mut b.conv1, &mut b.conv2] {
            c.b.value = Tensor::uniform(c.b.value.shape(), -0.2, 0.2, rng);
        }
    }
    for p in [&mut m.gru_fw, &mut m.gru_bw] {
        for b in [&mut p.b_z, &mut p.b_r, &mut p.b_h] {
            b.value = Tensor::uniform(b.value.shape(), -0.5, 0.5, rng);
        }
    }
    m.head.b.value = Tensor::uniform(m.head.b.value.shape(), -0.5, 0.5, rng);
    // Embedding rows are tiny at initialization; widen them so gradients of
    // downstream parameters are well above finite-difference noise.
    for v in m.embedding.value.data_mut()[..(BYTE_VOCAB - 1) * 4].iter_mut() {
        *v *= 20.0;
    }
    Ok(m)
}

fn random_ids(batch: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<u16> {
    let mut ids = Vec::with_capacity(batch * len);
    for _ in 0..batch {
        let used = rng.gen_range(len / 2..=len);
        for t in 0..len {
            ids.push(if t < used { rng.gen_range(0..24) * 10 } else { PAD_ID });
        }
    }
    ids
}

fn run_component(name: &str, seed: u64, scale: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(name.len() as u64));
    let probe_seed = seed ^ 0xA5A5;
    match name {
        "elementwise" => {
            let inputs = [uniform(&[3, 4], &mut rng), uniform(&[3, 4], &mut rng), uniform(&[3, 4], &mut rng)];
            check(&inputs, None, scale, |g, v| {
                let ab = g.mul(v[0], v[1])?;
                let h1 = g.add(ab, v[2])?;
                let h1 = g.tanh(h1);
                let h2 = g.mul(h1, v[0])?;
                let h2 = g.sub(h2, v[1])?;
                let h2 = g.sigmoid(h2);
                let h3 = g.add(h2, h1)?;
                let h3 = g.affine(h3, 0.7, 0.1);
                let h3 = g.tanh(h3);
                contract(g, h3, probe_seed)
            })
        }
        "matmul" => {
            let inputs = [uniform(&[2, 3, 4], &mut rng), uniform(&[4, 5], &mut rng), uniform(&[5], &mut rng)];
            check(&inputs, None, scale, |g, v| {
                let y = g.matmul(v[0], v[1])?;
                let y = g.add_bias(y, v[2])?;
                contract(g, y, probe_seed)
            })
        }
        "embed" => {
            let table = uniform(&[BYTE_VOCAB, 3], &mut rng);
            let ids: Vec<usize> = (0..10).map(|i| if i < 8 { rng.gen_range(0..256) } else { 256 }).collect();
            check(&[table], None, scale, |g, v| {
                let y = g.embed(v[0], &ids, &[2, 5], Some(usize::from(PAD_ID)))?;
                contract(g, y, probe_seed)
            })
        }
        "conv1d_same" => {
            let p = ConvParams::init("conv", 8, 8, 3, &mut rng);
            let inputs = [uniform(&[4, 12, 8], &mut rng), p.w.value.clone(), uniform(&[3], &mut rng)];
            check(&inputs, None, scale, |g, v| {
                let y = g.conv1d_same(v[0], v[1], v[2])?;
                contract(g, y, probe_seed)
            })
        }
        "batch_norm_train" | "batch_norm_infer" => {
            let train = name == "batch_norm_train";
            let mut p = BnParams::init("bn", 3);
            p.running_mean.value = uniform(&[3], &mut rng);
            p.running_var.value = Tensor::uniform(&[3], 0.5, 2.0, &mut rng);
            let inputs = [
                Tensor::uniform(&[4, 6, 3], -2.0, 2.0, &mut rng),
                Tensor::uniform(&[3], 0.5, 1.5, &mut rng),
                uniform(&[3], &mut rng),
            ];
            let names = vec!["x".into(), "bn.gamma".into(), "bn.beta".into()];
            check(&inputs, Some(names), scale, |g, v| {
                let mode = if train { LayerMode::Train } else { LayerMode::Infer };
                let (y, _) = batch_norm(g, v[0], &p, mode)?;
                contract(g, y, probe_seed)
            })
        }
        "dropout_frozen" => {
            let inputs = [uniform(&[5, 6], &mut rng)];
            check(&inputs, None, scale, |g, v| {
                let mut mask_rng = ChaCha8Rng::seed_from_u64(probe_seed);
                let y = dropout(g, v[0], 0.5, LayerMode::Train, &mut mask_rng)?;
                let y = g.tanh(y);
                contract(g, y, probe_seed)
            })
        }
        "max_pool1d" => {
            let inputs = [uniform(&[2, 9, 3], &mut rng)];
            check(&inputs, None, scale, |g, v| {
                let y = g.max_pool1d(v[0], 2)?;
                contract(g, y, probe_seed)
            })
        }
        "gru_sequence" => {
            let p = random_gru("gru", 4, 3, &mut rng);
            let mut inputs = vec![uniform(&[6, 4], &mut rng), Tensor::uniform(&[3], -0.5, 0.5, &mut rng)];
            inputs.extend(values_of(&p.params()));
            let mut names = vec!["x".to_string(), "h0".to_string()];
            names.extend(names_of(&p.params()));
            check(&inputs, Some(names), scale, |g, v| {
                let out = gru_sequence(g, v[0], &p, v[1], false, None)?;
                contract(g, out.states, probe_seed)
            })
        }
        "bigru_encode" => {
            let fw = random_gru("fw", 3, 2, &mut rng);
            let bw = random_gru("bw", 3, 2, &mut rng);
            let mut inputs = vec![uniform(&[2, 5, 3], &mut rng)];
            inputs.extend(values_of(&fw.params()));
            inputs.extend(values_of(&bw.params()));
            let mut names = vec!["x".to_string()];
            names.extend(names_of(&fw.params()));
            names.extend(names_of(&bw.params()));
            check(&inputs, Some(names), scale, |g, v| {
                let y = bigru_encode(g, v[0], &fw, &bw, None)?;
                contract(g, y, probe_seed)
            })
        }
        "dense_softmax" => {
            let p = DenseParams::init("head", 4, 5, &mut rng);
            let inputs = [uniform(&[3, 4], &mut rng), p.w.value.clone(), uniform(&[5], &mut rng)];
            let names = vec!["v".into(), "head.W".into(), "head.b".into()];
            check(&inputs, Some(names), scale, |g, v| {
                let y = dense_softmax(g, v[0], &p)?;
                contract(g, y, probe_seed)
            })
        }
        "cross_entropy" => {
            let golds: Vec<usize> = (0..4).map(|_| rng.gen_range(0..5)).collect();
            let inputs = [uniform(&[4, 5], &mut rng)];
            check(&inputs, None, scale, |g, v| {
                let p = g.softmax(v[0]);
                cross_entropy(g, p, &golds)
            })
        }
        "residual_block_concat" | "residual_block_add" => {
            let merge = if name.ends_with("add") {
                MergeMode::Add
            } else {
                MergeMode::Concat
            };
            let mut p = ResidualBlockParams::init("block0", 3, 3, (8, 4), &mut rng);
            p.conv2.b.value = uniform(&[3], &mut rng);
            for bn in [&mut p.bn1, &mut p.bn2] {
                bn.gamma.value = Tensor::uniform(&[3], 0.5, 1.5, &mut rng);
                bn.beta.value = uniform(&[3], &mut rng);
            }
            // conv1's bias feeds a train-mode normalization, which removes any
            // per-channel shift: its gradient is exactly zero, so relative
            // error is meaningless there and it is left out.
            let checked: Vec<&Parameter> = p
                .params()
                .into_iter()
                .filter(|q| Model::is_trainable(&q.name) && q.name != "block0.conv1.b")
                .collect();
            let mut inputs = vec![uniform(&[2, 10, 3], &mut rng)];
            inputs.extend(values_of(&checked));
            let mut names = vec!["x".to_string()];
            names.extend(names_of(&checked));
            check(&inputs, Some(names), scale, |g, v| {
                let mut mask_rng = ChaCha8Rng::seed_from_u64(probe_seed);
                let out = residual_block(g, v[0], &p, LayerMode::Train, merge, 0.5, 2, &mut mask_rng)?;
                contract(g, out.pooled, probe_seed)
            })
        }
        "model_infer" | "model_train" => {
            let train = name == "model_train";
            let model = tiny_model(seed, MergeMode::Concat, &mut rng)?;
            let ids = random_ids(2, 16, &mut rng);
            let golds = vec![rng.gen_range(0..3), rng.gen_range(0..3)];
            let checked: Vec<&Parameter> = model
                .trainable()
                .into_iter()
                .filter(|q| !(train && q.name.ends_with(".conv1.b")))
                .collect();
            let inputs = values_of(&checked);
            let names = names_of(&checked);
            check(&inputs, Some(names), scale, |g, _| {
                let mut mask_rng = ChaCha8Rng::seed_from_u64(probe_seed);
                let mode = if train { LayerMode::Train } else { LayerMode::Infer };
                let (probs, _) = model.forward_in(g, &ids, 2, mode, &mut mask_rng)?;
                cross_entropy(g, probs, &golds)
            })
        }
        other => panic!("unknown gradient-check component {other:?}"),
    }
}

/// Runs every component with inputs drawn from `seed`. When `fault` names a
/// component, its analytic gradients are scaled by 1.01 before comparison.
pub fn gradient_suite(seed: u64, fault: Option<&str>) -> Result<Vec<ComponentResult>> {
    COMPONENTS
        .iter()
        .map(|&name| {
            let scale = if fault == Some(name) { 1.01 } else { 1.0 };
            Ok(ComponentResult {
                name,
                max_relative_error: run_component(name, seed, scale)?,
            })
        })
        .collect()
}

/// Single component by name, for targeted checks.
pub fn check_component(name: &str, seed: u64) -> Result<f64> {
    assert!(COMPONENTS.contains(&name), "unknown component {name:?}");
    run_component(name, seed, 1.0)
}

// TODO: exercise unbatched conv/pool inputs in the suite as well; only the
// batched path is checked here.
#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_is_detected_and_named() {
        let results = gradient_suite(0, Some("matmul")).unwrap();
        for r in &results {
            assert_eq!(r.passed(), r.name != "matmul", "{} {}", r.name, r.max_relative_error);
        }
    }
}
