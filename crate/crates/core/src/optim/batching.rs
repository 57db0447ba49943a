use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{encode_raw, Dataset, LabelVocab};
use crate::error::{Error, Result};

/// Sentences as raw bytes with label indices under a fixed vocabulary.
#[derive(Clone, Debug, Default)]
pub struct EncodedSet {
    pub bytes: Vec<Vec<u8>>,
    pub labels: Vec<usize>,
}

impl EncodedSet {
    /// Fails with a configuration error naming labels missing from `vocab`.
    pub fn new(dataset: &Dataset, vocab: &LabelVocab) -> Result<Self> {
        let labels = dataset.label_ids(vocab).map_err(|missing| {
            Error::Config(format!("labels not in the model vocabulary: {}", missing.join(", ")))
        })?;
        Ok(Self {
            bytes: dataset.examples.iter().map(|e| e.bytes().to_vec()).collect(),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            bytes: indices.iter().map(|&i| self.bytes[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// A (rows x max_len) id matrix with its labels.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<u16>,
    pub labels: Vec<usize>,
    /// Position of each row in the source set.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }
}

/// Splits `set` into consecutive batches of `batch_size` (the last may be
/// smaller), each sentence truncated to `max_len` bytes and padded.
pub fn make_batches<R: Rng + ?Sized>(
    set: &EncodedSet,
    batch_size: usize,
    max_len: usize,
    rng: &mut R,
    shuffle: bool,
) -> Vec<Batch> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..set.len()).collect();
    if shuffle {
        order.shuffle(rng);
    }
    order
        .chunks(batch_size)
        .map(|chunk| {
            let mut ids = Vec::with_capacity(chunk.len() * max_len);
            for &i in chunk {
                ids.extend(encode_raw(&set.bytes[i], max_len));
            }
            Batch {
                ids,
                labels: chunk.iter().map(|&i| set.labels[i]).collect(),
                indices: chunk.to_vec(),
            }
        })
        .collect()
}
