//! The residual byte network and its file format.

mod block;
mod config;
mod io;
mod network;

pub use block::{residual_block, BlockOutput, ResidualBlockParams};
pub use config::{MergeMode, ModelConfig};
pub use io::{from_bytes, load_model, save_model, to_bytes, FORMAT_VERSION, MAGIC};
pub use network::{argmax_rows, build_model, ForwardPass, Model};
