//! Accuracy, per-class precision/recall/F1 and macro-F1.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::write_json;
use crate::error::{Error, Result};

/// A prediction, or a reply that could not be mapped to a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prediction {
    Label(usize),
    ParseFailure,
}

impl From<usize> for Prediction {
    fn from(label: usize) -> Self {
        Prediction::Label(label)
    }
}

impl Prediction {
    pub fn label(self) -> Option<usize> {
        match self {
            Prediction::Label(l) => Some(l),
            Prediction::ParseFailure => None,
        }
    }
}

/// `cells[gold][pred]`, plus a failure column counting parse failures per
/// gold label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_labels: usize,
    pub cells: Vec<Vec<u64>>,
    pub failures: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum::<u64>() + self.failures.iter().sum::<u64>()
    }

    pub fn n_failures(&self) -> u64 {
        self.failures.iter().sum()
    }

    fn correct(&self) -> u64 {
        (0..self.n_labels).map(|i| self.cells[i][i]).sum()
    }
}

pub fn confusion_matrix(preds: &[Prediction], gold: &[usize], n_labels: usize) -> Result<ConfusionMatrix> {
    if preds.len() != gold.len() {
        return Err(Error::InvalidEvaluation(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            gold.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidEvaluation("no samples".into()));
    }
    let mut cells = vec![vec![0u64; n_labels]; n_labels];
    let mut failures = vec![0u64; n_labels];
    for (pred, &g) in preds.iter().zip(gold) {
        if g >= n_labels {
            return Err(Error::InvalidEvaluation(format!("gold label {g} out of range")));
        }
        match *pred {
            Prediction::Label(p) if p >= n_labels => {
                return Err(Error::InvalidEvaluation(format!("predicted label {p} out of range")))
            }
            Prediction::Label(p) => cells[g][p] += 1,
            Prediction::ParseFailure => failures[g] += 1,
        }
    }
    Ok(ConfusionMatrix {
        n_labels,
        cells,
        failures,
    })
}

/// Correct predictions over all samples, parse failures included.
pub fn accuracy(matrix: &ConfusionMatrix) -> Result<f64> {
    let total = matrix.total();
    if total == 0 {
        return Err(Error::InvalidEvaluation("no samples".into()));
    }
    Ok(matrix.correct() as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroF1 {
    pub per_class: Vec<ClassScores>,
    pub macro_f1: f64,
}

/// Per-class scores with zero for any empty denominator, averaged without
/// weights over every catalog label. Parse failures count against recall
/// but not against any label's precision.
pub fn macro_f1(matrix: &ConfusionMatrix) -> Result<MacroF1> {
    if matrix.total() == 0 {
        return Err(Error::InvalidEvaluation("no samples".into()));
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let per_class: Vec<ClassScores> = (0..matrix.n_labels)
        .map(|i| {
            let tp = matrix.cells[i][i];
            let predicted: u64 = matrix.cells.iter().map(|row| row[i]).sum();
            let actual: u64 = matrix.cells[i].iter().sum::<u64>() + matrix.failures[i];
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, actual);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores {
                label: i,
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / matrix.n_labels as f64;
    Ok(MacroF1 { per_class, macro_f1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    pub confusion: Vec<Vec<u64>>,
    pub n_samples: u64,
    pub n_parse_failures: u64,
}

impl EvaluationReport {
    pub fn from_matrix(matrix: &ConfusionMatrix) -> Result<Self> {
        let f1 = macro_f1(matrix)?;
        Ok(Self {
            accuracy: accuracy(matrix)?,
            macro_f1: f1.macro_f1,
            per_class: f1.per_class,
            confusion: matrix.cells.clone(),
            n_samples: matrix.total(),
            n_parse_failures: matrix.n_failures(),
        })
    }

    pub fn evaluate(preds: &[Prediction], gold: &[usize], n_labels: usize) -> Result<Self> {
        Self::from_matrix(&confusion_matrix(preds, gold, n_labels)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    /// `acc / macroF1` as percentages with two decimals.
    pub fn cell(&self) -> String {
        format!("{:.2} / {:.2}", self.accuracy * 100.0, self.macro_f1 * 100.0)
    }
}
