//! Byte-level language identification with a residual convolutional network
//! feeding a bidirectional GRU.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`autodiff`]), the layers built on it ([`nn`]), the network and its file
//! format ([`model`]), training ([`optim`]), text ingestion ([`data`]) and
//! scoring ([`metrics`]).

mod error;
mod linalg;

pub mod autodiff;
pub mod data;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod selfcheck;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

pub use data::{Dataset, Example, LabelVocab};
pub use model::{build_model, load_model, save_model, MergeMode, Model, ModelConfig};
pub use nn::LayerMode;
pub use optim::{train, History, TrainConfig};
