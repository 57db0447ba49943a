use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::LabelVocab;
use crate::error::{Error, Result};

/// One labelled sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub text: String,
    pub label: String,
}

impl Example {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            label: label.into(),
        }
    }

    /// The exact UTF-8 bytes of the sentence.
    pub fn bytes(&self) -> &[u8] {
        self.text.as_bytes()
    }
}

/// Ordered examples plus the vocabulary of their labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub labels: LabelVocab,
}

impl Dataset {
    /// Builds the vocabulary from the examples' labels (sorted).
    pub fn new(examples: Vec<Example>) -> Self {
        let labels = LabelVocab::from_labels(examples.iter().map(|e| e.label.as_str()));
        Self { examples, labels }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Label indices under `vocab`; `Err` lists every label `vocab` lacks.
    pub fn label_ids(&self, vocab: &LabelVocab) -> std::result::Result<Vec<usize>, Vec<String>> {
        let mut missing: Vec<String> = Vec::new();
        let ids = self
            .examples
            .iter()
            .map(|e| match vocab.index(&e.label) {
                Some(i) => i,
                None => {
                    if !missing.contains(&e.label) {
                        missing.push(e.label.clone());
                    }
                    0
                }
            })
            .collect();
        if missing.is_empty() {
            Ok(ids)
        } else {
            missing.sort();
            Err(missing)
        }
    }

    /// Keeps examples satisfying `keep`, in order, with the vocabulary unchanged.
    pub fn retain(mut self, mut keep: impl FnMut(&Example) -> bool) -> Self {
        self.examples.retain(|e| keep(e));
        self
    }
}

/// Counts noteworthy events while reading a TSV file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub invalid_utf8_skipped: usize,
}

/// Reads `sentence<TAB>label` lines. Blank lines are ignored, CRLF is
/// accepted, and lines that are not valid UTF-8 are skipped and counted.
pub fn load_tsv(path: &Path) -> Result<(Dataset, LoadReport)> {
    let raw = fs::read(path)?;
    parse_tsv(&raw, path)
}

pub fn parse_tsv(raw: &[u8], path: &Path) -> Result<(Dataset, LoadReport)> {
    let parse_error = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut report = LoadReport::default();
    let mut examples = Vec::new();
    for (n, line) in raw.split(|&b| b == b'\n').enumerate() {
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let Ok(line) = std::str::from_utf8(line) else {
            log::warn!("{}:{}: skipping line that is not valid UTF-8", path.display(), n + 1);
            report.invalid_utf8_skipped += 1;
            continue;
        };
        let tabs = line.matches('\t').count();
        if tabs != 1 {
            return Err(parse_error(
                n + 1,
                format!("expected exactly one TAB between sentence and label, found {tabs}"),
            ));
        }
        let (text, label) = line.split_once('\t').expect("one tab");
        if label.is_empty() {
            return Err(parse_error(n + 1, "empty label".into()));
        }
        examples.push(Example::new(text, label));
    }
    if examples.is_empty() {
        return Err(parse_error(0, "no examples in file".into()));
    }
    if report.invalid_utf8_skipped > 0 {
        log::warn!(
            "{}: skipped {} invalid UTF-8 line(s)",
            path.display(),
            report.invalid_utf8_skipped
        );
    }
    Ok((Dataset::new(examples), report))
}

/// Writes examples as LF-terminated `sentence<TAB>label` lines.
pub fn write_tsv<W: Write>(examples: &[Example], mut out: W) -> std::io::Result<()> {
    for e in examples {
        writeln!(out, "{}\t{}", e.text, e.label)?;
    }
    Ok(())
}
