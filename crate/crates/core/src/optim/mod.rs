//! Optimization: ADAM, mini-batching and the early-stopping loop.

mod adam;
mod batching;
mod train;

pub use adam::AdamState;
pub use batching::{make_batches, Batch, EncodedSet};
pub use train::{
    evaluate, split_dev, train, train_encoded, EarlyStopping, EpochRecord, Evaluation, History, TrainConfig,
    Verdict,
};
