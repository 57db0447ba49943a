//! Shared-task style scoring: confusion matrices, accuracy and F1 variants.

use std::fmt::Write as _;

use serde::Serialize;

use crate::data::LabelVocab;
use crate::error::{contract, ensure, Error, Result};

/// Gold-by-predicted counts; rows are gold labels, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: LabelVocab,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(labels: LabelVocab) -> Self {
        let k = labels.len();
        Self {
            labels,
            counts: vec![vec![0; k]; k],
        }
    }

    /// Matrix from explicit counts, `counts[gold][pred]`.
    pub fn from_counts(labels: LabelVocab, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = labels.len();
        ensure!(
            counts.len() == k && counts.iter().all(|r| r.len() == k),
            "confusion counts must be {k}x{k}"
        );
        Ok(Self { labels, counts })
    }

    pub fn from_indices(labels: LabelVocab, golds: &[usize], preds: &[usize]) -> Result<Self> {
        ensure!(
            golds.len() == preds.len(),
            "{} gold labels but {} predictions",
            golds.len(),
            preds.len()
        );
        let mut cm = Self::zeros(labels);
        let k = cm.labels.len();
        for (&g, &p) in golds.iter().zip(preds) {
            ensure!(g < k && p < k, "label index out of range for {k} classes");
            cm.counts[g][p] += 1;
        }
        Ok(cm)
    }

    pub fn labels(&self) -> &LabelVocab {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, gold: &str, pred: &str) -> Option<u64> {
        Some(self.counts[self.labels.index(gold)?][self.labels.index(pred)?])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    /// TSV with a header row of predicted labels and a leading gold column.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("gold\\pred");
        for c in self.labels.codes() {
            write!(out, "\t{c}").unwrap();
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(self.labels.code(i));
            for v in row {
                write!(out, "\t{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Counts `(gold, pred)` pairs of language codes.
pub fn confusion_matrix<S: AsRef<str>>(golds: &[S], preds: &[S], labels: &LabelVocab) -> Result<ConfusionMatrix> {
    ensure!(
        golds.len() == preds.len(),
        "{} gold labels but {} predictions",
        golds.len(),
        preds.len()
    );
    let index = |code: &str| labels.index(code).ok_or_else(|| contract!("unknown label {code:?}"));
    let g = golds.iter().map(|c| index(c.as_ref())).collect::<Result<Vec<_>>>()?;
    let p = preds.iter().map(|c| index(c.as_ref())).collect::<Result<Vec<_>>>()?;
    ConfusionMatrix::from_indices(labels.clone(), &g, &p)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Aggregate scores. Precision or recall with a zero denominator counts as
/// 0, and the macro average runs over every vocabulary class, including
/// classes without gold examples.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    ensure!(total > 0, "cannot score an empty confusion matrix");
    let k = cm.labels.len();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let precision = ratio(tp, cm.predicted(c));
            let recall = ratio(tp, cm.support(c));
            ClassMetrics {
                label: cm.labels.code(c).to_string(),
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: cm.support(c),
            }
        })
        .collect();
    let tp = cm.trace();
    let errors = total - tp;
    // Every error is one false positive and one false negative.
    let f1_micro = ratio(2 * tp, 2 * tp + 2 * errors);
    let f1_macro = per_class.iter().map(|c| c.f1).sum::<f64>() / k as f64;
    let f1_weighted = per_class.iter().map(|c| c.f1 * c.support as f64).sum::<f64>() / total as f64;
    Ok(MetricsReport {
        accuracy: ratio(tp, total),
        f1_micro,
        f1_macro,
        f1_weighted,
        per_class,
    })
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 4] = ["Accuracy", "F1 (micro)", "F1 (macro)", "F1 (weighted)"];

    /// Header plus one aligned row labelled `run`.
    pub fn table(&self, run: &str) -> String {
        let width = run.len().max(3);
        let mut out = format!("{:<width$}", "Run");
        for c in Self::COLUMNS {
            write!(out, "  {c:>13}").unwrap();
        }
        out.push('\n');
        write!(out, "{run:<width$}").unwrap();
        for v in [self.accuracy, self.f1_micro, self.f1_macro, self.f1_weighted] {
            write!(out, "  {v:>13.4}").unwrap();
        }
        out.push('\n');
        out
    }

    /// Per-class precision/recall/F1 lines.
    pub fn class_table(&self) -> String {
        let mut out = format!("{:<8}  {:>9}  {:>9}  {:>9}  {:>7}\n", "label", "precision", "recall", "f1", "support");
        for c in &self.per_class {
            writeln!(
                out,
                "{:<8}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
                c.label, c.precision, c.recall, c.f1, c.support
            )
            .unwrap();
        }
        out
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct") + "\n"
    }
}

/// `pred` if it belongs to `group`, otherwise `fallback`.
pub fn project_to_group<'a, S: AsRef<str>>(pred: &'a str, group: &'a [S], fallback: &'a str) -> Result<&'a str> {
    if !group.iter().any(|c| c.as_ref() == fallback) {
        return Err(Error::Config(format!("fallback {fallback:?} is not in the group")));
    }
    Ok(if group.iter().any(|c| c.as_ref() == pred) {
        pred
    } else {
        fallback
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    /// Guessing uniformly among the classes.
    Uniform,
    /// Always predicting the most frequent gold class.
    Majority,
}

/// Expected accuracy of a trivial predictor on `golds` over `n_classes`.
pub fn baseline_accuracy(golds: &[usize], n_classes: usize, kind: Baseline) -> Result<f64> {
    ensure!(!golds.is_empty(), "baseline of an empty dataset");
    ensure!(n_classes > 0, "baseline needs at least one class");
    Ok(match kind {
        Baseline::Uniform => 1.0 / n_classes as f64,
        Baseline::Majority => {
            let mut counts = vec![0usize; n_classes];
            for &g in golds {
                ensure!(g < n_classes, "gold index {g} out of range");
                counts[g] += 1;
            }
            *counts.iter().max().unwrap() as f64 / golds.len() as f64
        }
    })
}
