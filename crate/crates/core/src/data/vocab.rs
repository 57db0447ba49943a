use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ensure, Result};

/// Ordered set of language codes with dense indices `0..K`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct LabelVocab {
    codes: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocab {
    /// Vocabulary in the given order; codes must be unique.
    pub fn new(codes: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(codes.len());
        for (i, c) in codes.iter().enumerate() {
            ensure!(index.insert(c.clone(), i).is_none(), "duplicate label {c:?}");
        }
        Ok(Self { codes, index })
    }

    /// Distinct labels sorted lexicographically.
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let mut codes: Vec<String> = labels.into_iter().map(str::to_string).collect();
        codes.sort();
        codes.dedup();
        Self::new(codes).expect("deduplicated")
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn index(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn code(&self, i: usize) -> &str {
        &self.codes[i]
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn contains(&self, code: &str) -> bool {
        self.index.contains_key(code)
    }
}

impl Serialize for LabelVocab {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.codes.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabelVocab {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let codes = Vec::<String>::deserialize(d)?;
        LabelVocab::new(codes).map_err(serde::de::Error::custom)
    }
}
