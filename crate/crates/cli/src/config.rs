//! Resolves model and training settings. Explicit flags win over the config
//! file, which wins over the preset, which wins over the defaults.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use resident::{ModelConfig, TrainConfig};
use serde_json::{Map, Value};

use crate::args::TrainArgs;

/// Field names of a serializable settings struct.
fn keys_of<T: serde::Serialize>(value: &T) -> Vec<String> {
    match serde_json::to_value(value).expect("plain struct") {
        Value::Object(m) => m.keys().cloned().collect(),
        _ => unreachable!("settings serialize to objects"),
    }
}

fn overlay<T>(base: &T, fields: &Map<String, Value>) -> Result<T>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut v = serde_json::to_value(base)?;
    let obj = v.as_object_mut().expect("plain struct");
    for (k, val) in fields {
        obj.insert(k.clone(), val.clone());
    }
    Ok(serde_json::from_value(v)?)
}

fn read_config_file(path: &Path) -> Result<Map<String, Value>> {
    let raw = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    match serde_json::from_str(&raw).with_context(|| format!("parsing config {}", path.display()))? {
        Value::Object(m) => Ok(m),
        _ => bail!("config {} must hold a JSON object", path.display()),
    }
}

/// Applies file contents over the current settings. `n_classes`, when given,
/// must agree with the training labels.
fn apply_file(
    fields: Map<String, Value>,
    model: &mut ModelConfig,
    train: &mut TrainConfig,
    n_classes: usize,
) -> Result<()> {
    let model_keys = keys_of(model);
    let train_keys = keys_of(train);
    let (mut m, mut t) = (Map::new(), Map::new());
    for (k, v) in fields {
        if k == "n_classes" {
            if v.as_u64() != Some(n_classes as u64) {
                bail!("config sets n_classes to {v} but the training data has {n_classes} labels");
            }
        } else if model_keys.contains(&k) {
            m.insert(k, v);
        } else if train_keys.contains(&k) {
            t.insert(k, v);
        } else {
            bail!("unknown config field {k:?}");
        }
    }
    *model = overlay(model, &m).context("model settings in config")?;
    *train = overlay(train, &t).context("training settings in config")?;
    Ok(())
}

pub fn resolve(args: &TrainArgs, n_classes: usize) -> Result<(ModelConfig, TrainConfig)> {
    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();
    if let Some(p) = args.preset {
        model.n_blocks = p.n_blocks();
    }
    model.n_classes = n_classes;
    if let Some(path) = &args.config {
        apply_file(read_config_file(path)?, &mut model, &mut train, n_classes)?;
    }

    let a = &args.arch;
    if let Some(v) = a.n_blocks {
        model.n_blocks = v;
    }
    if let Some(v) = a.d_b {
        model.d_b = v;
    }
    if let Some(v) = a.conv_filters {
        model.conv_filters = v;
    }
    if let Some(w) = &a.windows {
        model.windows = (w[0], w[1]);
    }
    if let Some(v) = a.pool {
        model.pool = v;
    }
    if let Some(v) = a.merge {
        model.merge_mode = v.into();
    }
    if let Some(v) = a.block_dropout {
        model.block_dropout = v;
    }
    if let Some(v) = a.gru_hidden {
        model.gru_hidden = v;
    }
    if let Some(v) = a.gru_dropout {
        model.gru_dropout = v;
    }
    if let Some(v) = a.max_len {
        model.max_len = v;
    }
    if let Some(v) = args.epochs {
        train.max_epochs = v;
    }
    if let Some(v) = args.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = args.patience {
        train.patience = v;
    }
    if let Some(v) = args.learning_rate {
        train.learning_rate = v;
    }
    if let Some(v) = args.seed {
        train.seed = v;
    }
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}
