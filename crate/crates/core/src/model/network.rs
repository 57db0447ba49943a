use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BatchStats, Graph, Var};
use crate::data::{LabelVocab, BYTE_VOCAB, PAD_ID};
use crate::error::{ensure, Error, Result};
use crate::model::{residual_block, ModelConfig, ResidualBlockParams};
use crate::nn::{bigru_encode, dense_softmax, embed, DenseParams, GruDropout, GruParams, LayerMode, Parameter};
use crate::tensor::Tensor;

/// Byte embeddings, residual blocks, bi-GRU and softmax head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub labels: LabelVocab,
    pub embedding: Parameter,
    pub blocks: Vec<ResidualBlockParams>,
    pub gru_fw: GruParams,
    pub gru_bw: GruParams,
    pub head: DenseParams,
}

/// Graph of one forward pass together with what training needs from it.
pub struct ForwardPass {
    pub graph: Graph,
    /// (batch x n_classes) class probabilities.
    pub probs: Var,
    /// Per block, the batch statistics of its two normalizations (Train only).
    pub bn_stats: Vec<[Option<BatchStats>; 2]>,
}

const EMBED_INIT: f64 = 0.05;

fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

/// Deterministically initialized model: Glorot-uniform weight matrices, zero
/// biases, unit batch-norm scale, embeddings `U(-0.05, 0.05)` with the
/// padding row fixed at zero. Values are rounded to `f32` so a freshly built
/// model survives a save/load untouched.
pub fn build_model(config: &ModelConfig, labels: LabelVocab, seed: u64) -> Result<Model> {
    config.validate()?;
    if labels.len() != config.n_classes {
        return Err(Error::Config(format!(
            "config has {} classes but the label vocabulary has {}",
            config.n_classes,
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = Tensor::uniform(&[BYTE_VOCAB, config.d_b], -EMBED_INIT, EMBED_INIT, &mut rng);
    let pad = PAD_ID as usize;
    table.data_mut()[pad * config.d_b..(pad + 1) * config.d_b].fill(0.0);

    let blocks = (0..config.n_blocks)
        .map(|i| {
            ResidualBlockParams::init(
                &format!("block{i}"),
                config.block_channels(i),
                config.conv_filters,
                config.windows,
                &mut rng,
            )
        })
        .collect();
    let gru_fw = GruParams::init("gru_fw", config.gru_input(), config.gru_hidden, &mut rng);
    let gru_bw = GruParams::init("gru_bw", config.gru_input(), config.gru_hidden, &mut rng);
    let head = DenseParams::init("head", 2 * config.gru_hidden, config.n_classes, &mut rng);
    let mut model = Model {
        config: config.clone(),
        labels,
        embedding: Parameter::new("embedding", table),
        blocks,
        gru_fw,
        gru_bw,
        head,
    };
    model.round_to_f32();
    Ok(model)
}

impl Model {
    /// Every stored tensor in canonical order, running statistics included.
    pub fn tensors(&self) -> Vec<&Parameter> {
        let mut out = vec![&self.embedding];
        for b in &self.blocks {
            out.extend(b.params());
        }
        out.extend(self.gru_fw.params());
        out.extend(self.gru_bw.params());
        out.push(&self.head.w);
        out.push(&self.head.b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = vec![&mut self.embedding];
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        out.extend(self.gru_fw.params_mut());
        out.extend(self.gru_bw.params_mut());
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    /// Parameters updated by the optimizer.
    pub fn trainable(&self) -> Vec<&Parameter> {
        self.tensors().into_iter().filter(|p| !is_buffer(&p.name)).collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Parameter> {
        self.tensors_mut().into_iter().filter(|p| !is_buffer(&p.name)).collect()
    }

    pub fn is_trainable(name: &str) -> bool {
        !is_buffer(name)
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|p| p.value.len()).sum()
    }

    /// Rounds every tensor to the `f32` storage precision of model files.
    pub fn round_to_f32(&mut self) {
        for p in self.tensors_mut() {
            p.value.round_to_f32();
        }
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[[Option<BatchStats>; 2]]) -> Result<()> {
        for (block, s) in self.blocks.iter_mut().zip(stats) {
            if let Some(s1) = &s[0] {
                block.bn1.update_running(s1)?;
            }
            if let Some(s2) = &s[1] {
                block.bn2.update_running(s2)?;
            }
        }
        Ok(())
    }

    /// Runs the network on `ids`, a row-major (batch x seq) id matrix.
    pub fn forward<R: Rng + ?Sized>(&self, ids: &[u16], batch: usize, mode: LayerMode, rng: &mut R) -> Result<ForwardPass> {
        let mut graph = Graph::new();
        let (probs, bn_stats) = self.forward_in(&mut graph, ids, batch, mode, rng)?;
        Ok(ForwardPass {
            graph,
            probs,
            bn_stats,
        })
    }

    /// Like [`Model::forward`] but records into `g`. Parameters already bound
    /// in `g` under this model's names are used in place of the stored values.
    pub fn forward_in<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        ids: &[u16],
        batch: usize,
        mode: LayerMode,
        rng: &mut R,
    ) -> Result<(Var, Vec<[Option<BatchStats>; 2]>)> {
        ensure!(batch > 0 && ids.len() % batch == 0, "forward: {} ids do not form {batch} rows", ids.len());
        let seq = ids.len() / batch;
        if self.config.pooled_len(seq) == 0 {
            return Err(Error::Config(format!(
                "sequence length {seq} is too short for {} pooling blocks",
                self.config.n_blocks
            )));
        }
        let cfg = &self.config;
        let ids: Vec<usize> = ids.iter().map(|&i| usize::from(i)).collect();
        let mut x = embed(g, &self.embedding, &ids, &[batch, seq], Some(PAD_ID as usize))?;
        let mut bn_stats = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let out = residual_block(g, x, block, mode, cfg.merge_mode, cfg.block_dropout, cfg.pool, rng)?;
            x = out.pooled;
            bn_stats.push(out.stats);
        }
        let masks = if mode == LayerMode::Train && cfg.gru_dropout > 0.0 {
            let d_in = cfg.gru_input();
            Some((
                GruDropout::sample(batch, d_in, cfg.gru_hidden, cfg.gru_dropout, rng)?,
                GruDropout::sample(batch, d_in, cfg.gru_hidden, cfg.gru_dropout, rng)?,
            ))
        } else {
            None
        };
        let sentence = bigru_encode(g, x, &self.gru_fw, &self.gru_bw, masks.as_ref().map(|(a, b)| (a, b)))?;
        let probs = dense_softmax(g, sentence, &self.head)?;
        Ok((probs, bn_stats))
    }

    /// Inference-mode class probabilities, (batch x n_classes).
    pub fn predict_proba(&self, ids: &[u16], batch: usize) -> Result<Tensor> {
        // Infer mode draws no random numbers; the generator is only a placeholder.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = self.forward(ids, batch, LayerMode::Infer, &mut rng)?;
        Ok(pass.graph.value(pass.probs).clone())
    }
}

/// Index of the largest entry of each row (first on ties).
pub fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    (0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
