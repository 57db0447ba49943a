use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{argmax_rows, Model};
use crate::nn::{cross_entropy, LayerMode};
use crate::optim::{make_batches, AdamState, EncodedSet};

/// Optimization and early-stopping settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without a lower dev loss before stopping.
    pub patience: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub learning_rate: f64,
    /// Share of the shuffled training data held out when no dev set is given.
    pub dev_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            max_epochs: 50,
            patience: 2,
            seed: 0,
            shuffle: true,
            learning_rate: 0.001,
            dev_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(Error::Config("dev_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Metrics of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_accuracy: f64,
    /// Wall-clock seconds; left out of serialized metrics so that they stay
    /// reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

impl EpochRecord {
    pub fn log_line(&self) -> String {
        format!(
            "epoch {:>3}  train_loss {:.6}  dev_loss {:.6}  dev_acc {:.4}  {:.1}s",
            self.epoch, self.train_loss, self.dev_loss, self.dev_accuracy, self.wall_time
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) with the lowest dev loss, earliest on ties.
    pub best_epoch: usize,
}

impl History {
    /// One JSON object per epoch, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain struct") + "\n")
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Stalled,
    Stop,
}

/// Tracks the best dev loss and decides when to stop.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stalled: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stalled: 0,
        }
    }

    /// Stops once `patience` consecutive epochs fail to lower the loss
    /// (a patience of 0 behaves like 1).
    pub fn observe(&mut self, epoch: usize, loss: f64) -> Verdict {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stalled = 0;
            return Verdict::Improved;
        }
        self.stalled += 1;
        if self.stalled >= self.patience.max(1) {
            Verdict::Stop
        } else {
            Verdict::Stalled
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Mean loss, accuracy and predicted classes of `model` on `set` in Infer mode.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

pub fn evaluate(model: &Model, set: &EncodedSet, batch_size: usize) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    let mut predictions = vec![0; set.len()];
    for batch in make_batches(set, batch_size, model.config.max_len, &mut rng, false) {
        let mut pass = model.forward(&batch.ids, batch.rows(), LayerMode::Infer, &mut rng)?;
        let loss = cross_entropy(&mut pass.graph, pass.probs, &batch.labels)?;
        total += pass.graph.value(loss).data()[0] * batch.rows() as f64;
        for (&i, p) in batch.indices.iter().zip(argmax_rows(pass.graph.value(pass.probs))) {
            predictions[i] = p;
        }
    }
    let correct = predictions
        .iter()
        .zip(&set.labels)
        .filter(|(p, g)| p == g)
        .count();
    Ok(Evaluation {
        loss: total / set.len() as f64,
        accuracy: correct as f64 / set.len() as f64,
        predictions,
    })
}

/// Shuffles `set` with `seed` and moves the last `fraction` of it into a
/// held-out set (at least one example).
pub fn split_dev(set: &EncodedSet, fraction: f64, seed: u64) -> Result<(EncodedSet, EncodedSet)> {
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((set.len() as f64 * fraction).round() as usize).max(1);
    if held >= set.len() {
        return Err(Error::Config(format!(
            "cannot hold out a dev set from {} training examples",
            set.len()
        )));
    }
    let (train, dev) = order.split_at(set.len() - held);
    Ok((set.subset(train), set.subset(dev)))
}

/// Trains with ADAM on mean cross-entropy and early stopping on dev loss.
///
/// Returns the weights of the best epoch. `on_epoch` sees each record as
/// soon as the epoch finishes.
pub fn train(
    model: Model,
    train_set: &Dataset,
    dev_set: Option<&Dataset>,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, History)> {
    let all = EncodedSet::new(train_set, &model.labels)?;
    let (train, dev) = match dev_set {
        Some(d) => (all, EncodedSet::new(d, &model.labels)?),
        None => split_dev(&all, cfg.dev_fraction, cfg.seed)?,
    };
    train_encoded(model, &train, &dev, cfg, on_epoch)
}

pub fn train_encoded(
    mut model: Model,
    train: &EncodedSet,
    dev: &EncodedSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, History)> {
    cfg.validate()?;
    if dev.is_empty() {
        return Err(Error::Config("dev set is empty".into()));
    }
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::default();
    adam.lr = cfg.learning_rate;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = History::default();
    let mut best = model.clone();

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        for batch in make_batches(train, cfg.batch_size, model.config.max_len, &mut rng, cfg.shuffle) {
            let mut pass = model.forward(&batch.ids, batch.rows(), LayerMode::Train, &mut rng)?;
            let loss = cross_entropy(&mut pass.graph, pass.probs, &batch.labels)?;
            loss_sum += pass.graph.value(loss).data()[0] * batch.rows() as f64;
            let grads = pass.graph.backward(loss)?.into_named();
            adam.step(model.trainable_mut(), &grads)?;
            model.update_running_stats(&pass.bn_stats)?;
        }
        let eval = evaluate(&model, dev, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            dev_loss: eval.loss,
            dev_accuracy: eval.accuracy,
            wall_time: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.epochs.push(record);
        match stopper.observe(epoch, eval.loss) {
            Verdict::Improved => best = model.clone(),
            Verdict::Stalled => {}
            Verdict::Stop => break,
        }
    }
    history.best_epoch = stopper.best_epoch();
    best.round_to_f32();
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(losses: &[f64], patience: usize) -> (usize, usize) {
        let mut es = EarlyStopping::new(patience);
        let mut ran = 0;
        for (i, &l) in losses.iter().enumerate() {
            ran = i + 1;
            if es.observe(i + 1, l) == Verdict::Stop {
                break;
            }
        }
        (ran, es.best_epoch())
    }

    #[test]
    fn patience_one_stops_after_first_stall() {
        assert_eq!(run(&[1.0, 0.9, 0.95, 0.96], 1), (3, 2));
    }

    #[test]
    fn patience_two() {
        assert_eq!(run(&[1.0, 0.9, 0.95, 0.96, 0.5], 2), (4, 2));
        assert_eq!(run(&[1.0, 0.9, 0.95, 0.8, 0.85, 0.7], 2), (6, 6));
    }

    #[test]
    fn ties_keep_earliest() {
        assert_eq!(run(&[0.5, 0.5, 0.7], 5), (3, 1));
    }

    #[test]
    fn large_patience_runs_everything() {
        let losses: Vec<f64> = (0..10).map(|i| 1.0 + (i % 3) as f64).collect();
        assert_eq!(run(&losses, 10).0, 10);
    }

    #[test]
    fn jsonl_has_no_wall_time() {
        let h = History {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                dev_loss: 0.25,
                dev_accuracy: 1.0,
                wall_time: 3.0,
            }],
            best_epoch: 1,
        };
        assert_eq!(
            h.to_jsonl(),
            "{\"epoch\":1,\"train_loss\":0.5,\"dev_loss\":0.25,\"dev_accuracy\":1.0}\n"
        );
    }
}
