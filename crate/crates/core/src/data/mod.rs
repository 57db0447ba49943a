//! Turning UTF-8 text files into labelled byte sequences.

mod clean;
mod codec;
mod groups;
mod tsv;
mod vocab;

pub use clean::{clean_tweet, filter_english, looks_english};
pub use codec::{decode_ids, encode_bytes, encode_raw, BYTE_VOCAB, PAD_ID};
pub use groups::{GroupTable, TASK_B_FALLBACK};
pub use tsv::{load_tsv, parse_tsv, write_tsv, Dataset, Example, LoadReport};
pub use vocab::LabelVocab;
