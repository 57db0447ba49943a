use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resident::autodiff::Graph;
use resident::data::{encode_bytes, PAD_ID};
use resident::model::{argmax_rows, from_bytes, residual_block, to_bytes, ResidualBlockParams};
use resident::nn::LayerMode;
use resident::{build_model, load_model, save_model, Error, LabelVocab, MergeMode, Model, ModelConfig, Tensor};

fn small_config() -> ModelConfig {
    ModelConfig {
        n_blocks: 2,
        d_b: 8,
        conv_filters: 8,
        gru_hidden: 6,
        n_classes: 3,
        max_len: 32,
        ..Default::default()
    }
}

fn labels() -> LabelVocab {
    LabelVocab::from_labels(["hr", "bs", "sr"])
}

fn random_ids(rows: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<u16> {
    let mut ids = Vec::new();
    for _ in 0..rows {
        let used = rng.gen_range(1..=len);
        ids.extend((0..len).map(|t| if t < used { rng.gen_range(0..256) } else { PAD_ID }));
    }
    ids
}

/// Gives the running statistics non-trivial values so Infer mode is
/// distinguishable from an untrained network.
fn perturbed(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.tensors_mut() {
        if p.name.ends_with("running_var") {
            p.value = Tensor::uniform(p.value.shape(), 0.5, 1.5, &mut rng);
        } else if p.name.ends_with("running_mean") {
            p.value = Tensor::uniform(p.value.shape(), -0.1, 0.1, &mut rng);
        }
    }
    model.round_to_f32();
}

#[test]
fn default_architecture_channel_chain() {
    let cfg = ModelConfig::default();
    assert_eq!(cfg.gru_input(), 256);
    let m = build_model(&cfg, LabelVocab::from_labels(["a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l"]), 0).unwrap();
    let chans: Vec<usize> = m.blocks.iter().map(|b| b.in_channels()).collect();
    assert_eq!(chans, [64, 128, 192]);
    assert_eq!(m.gru_fw.input_dim(), 256);
    assert_eq!(m.head.w.value.shape(), [200, 12]);
    assert_eq!(m.embedding.value.shape(), [257, 64]);
}

#[test]
fn add_mode_requires_matching_channels() {
    let cfg = ModelConfig {
        merge_mode: MergeMode::Add,
        conv_filters: 32,
        ..ModelConfig::default()
    };
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

#[test]
fn label_count_must_match_classes() {
    assert!(build_model(&small_config(), LabelVocab::from_labels(["a", "b"]), 0).is_err());
}

#[test]
fn pad_row_is_zero() {
    let m = build_model(&small_config(), labels(), 3).unwrap();
    let d = m.config.d_b;
    let row = &m.embedding.value.data()[usize::from(PAD_ID) * d..];
    assert!(row.iter().all(|&v| v == 0.0));
}

#[test]
fn probabilities_are_distributions() {
    let m = build_model(&small_config(), labels(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = m.predict_proba(&random_ids(5, 32, &mut rng), 5).unwrap();
    for r in 0..5 {
        let s: f64 = p.row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(p.row(r).iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn inference_is_batch_invariant() {
    let mut m = build_model(&small_config(), labels(), 2).unwrap();
    perturbed(&mut m, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ids = random_ids(6, 32, &mut rng);
    let all = m.predict_proba(&ids, 6).unwrap();
    for r in 0..6 {
        let one = m.predict_proba(&ids[r * 32..(r + 1) * 32], 1).unwrap();
        let diff: f64 = one.data().iter().zip(all.row(r)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "row {r}: {diff:e}");
    }
}

#[test]
fn same_seed_same_model() {
    let a = build_model(&small_config(), labels(), 9).unwrap();
    let b = build_model(&small_config(), labels(), 9).unwrap();
    let c = build_model(&small_config(), labels(), 10).unwrap();
    assert_eq!(to_bytes(&a).unwrap(), to_bytes(&b).unwrap());
    assert_ne!(to_bytes(&a).unwrap(), to_bytes(&c).unwrap());
}

#[test]
fn save_load_logits_identical() {
    let mut m = build_model(&small_config(), labels(), 4).unwrap();
    perturbed(&mut m, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.rsid");
    save_model(&m, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back.labels, m.labels);
    assert_eq!(back.config, m.config);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let ids = random_ids(1, 32, &mut rng);
        let (a, b) = (m.predict_proba(&ids, 1).unwrap(), back.predict_proba(&ids, 1).unwrap());
        assert_eq!(a.max_abs_diff(&b), 0.0);
    }
    assert_eq!(std::fs::read(&path).unwrap(), to_bytes(&back).unwrap());
}

fn format_offset(r: resident::Result<Model>) -> u64 {
    match r {
        Err(Error::Format { offset, .. }) => offset,
        other => panic!("expected a format error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn corrupted_files_rejected() {
    let m = build_model(&small_config(), labels(), 4).unwrap();
    let good = to_bytes(&m).unwrap();

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert_eq!(format_offset(from_bytes(&bad_magic)), 0);

    let mut bad_version = good.clone();
    bad_version[4] = 99;
    assert_eq!(format_offset(from_bytes(&bad_version)), 4);

    let mut bad_json = good.clone();
    bad_json[12] = b'!';
    format_offset(from_bytes(&bad_json));

    format_offset(from_bytes(&good[..good.len() - 3]));
    format_offset(from_bytes(&good[..10]));
    let mut trailing = good.clone();
    trailing.push(0);
    format_offset(from_bytes(&trailing));

    let mut nan = good.clone();
    let n = nan.len();
    nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    format_offset(from_bytes(&nan));

    assert!(from_bytes(&[]).is_err());
}

#[test]
fn input_shorter_than_pooling_rejected() {
    let cfg = ModelConfig { max_len: 4, ..small_config() };
    let m = build_model(&cfg, labels(), 0).unwrap();
    assert!(m.predict_proba(&encode_bytes("ab", 2), 1).is_err());
}

fn block_input(rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(&[2, 10, 4], -1.0, 1.0, rng)
}

#[test]
fn add_block_with_zero_branch_is_pooled_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut p = ResidualBlockParams::init("b", 4, 4, (8, 4), &mut rng);
    for q in [&mut p.conv2.w, &mut p.conv2.b] {
        q.value = Tensor::zeros(q.value.shape());
    }
    let x = block_input(&mut rng);
    for mode in [LayerMode::Train, LayerMode::Infer] {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let out = residual_block(&mut g, xv, &p, mode, MergeMode::Add, 0.5, 2, &mut rng).unwrap();
        assert_eq!(g.value(out.merged), &x);
        let pooled = g.value(out.pooled);
        for b in 0..2 {
            for t in 0..5 {
                for c in 0..4 {
                    let want = x.data()[(b * 10 + 2 * t) * 4 + c].max(x.data()[(b * 10 + 2 * t + 1) * 4 + c]);
                    assert_eq!(pooled.data()[(b * 5 + t) * 4 + c], want);
                }
            }
        }
    }
}

#[test]
fn concat_block_keeps_input_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = ResidualBlockParams::init("b", 4, 3, (8, 4), &mut rng);
    let x = block_input(&mut rng);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let out = residual_block(&mut g, xv, &p, LayerMode::Train, MergeMode::Concat, 0.5, 2, &mut rng).unwrap();
    let merged = g.value(out.merged);
    assert_eq!(merged.shape(), [2, 10, 7]);
    for row in 0..20 {
        assert_eq!(&merged.data()[row * 7..row * 7 + 4], &x.data()[row * 4..row * 4 + 4]);
    }
    assert_eq!(g.value(out.pooled).shape(), [2, 5, 7]);
}

#[test]
fn argmax_takes_first_maximum() {
    let p = Tensor::new(&[2, 3], vec![0.2, 0.4, 0.4, 0.9, 0.05, 0.05]).unwrap();
    assert_eq!(argmax_rows(&p), [1, 0]);
}
