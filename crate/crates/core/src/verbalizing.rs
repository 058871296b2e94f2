//! Verbalizers: label-word sets that turn per-word scores into label scores.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability vector over the label catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelDistribution {
    probs: Vec<f64>,
}

impl LabelDistribution {
    /// Validates an already-normalized vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidScores("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidScores(format!(
                "entries must be finite and non-negative: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidScores(format!("entries sum to {sum}, expected 1")));
        }
        Ok(Self { probs })
    }

    /// Divides non-negative weights by their sum.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidScores(format!(
                "weights must be finite and non-negative: {weights:?}"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidScores("all weights are zero".into()));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verbalizer {
    id: String,
    word_sets: Vec<Vec<String>>,
}

/// Verbalizer file entry: `{id, words: {label_index: [word, ...]}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbalizerSpec {
    pub id: String,
    pub words: BTreeMap<usize, Vec<String>>,
}

/// Builds a verbalizer covering labels `0..n_labels`. Words are lowercased.
pub fn parse_verbalizer(id: &str, words: &BTreeMap<usize, Vec<String>>, n_labels: usize) -> Result<Verbalizer> {
    let invalid = |message: String| Error::InvalidVerbalizer {
        id: id.to_string(),
        message,
    };
    if let Some(extra) = words.keys().find(|&&label| label >= n_labels) {
        return Err(invalid(format!(
            "label {extra} is outside the catalog of {n_labels} labels"
        )));
    }
    let mut word_sets = Vec::with_capacity(n_labels);
    for label in 0..n_labels {
        let list = words
            .get(&label)
            .ok_or_else(|| invalid(format!("missing entry for label {label}")))?;
        if list.is_empty() {
            return Err(invalid(format!("label {label} has no words")));
        }
        let mut seen = HashSet::new();
        let mut set = Vec::with_capacity(list.len());
        for word in list {
            let word = word.trim().to_lowercase();
            if word.is_empty() {
                return Err(invalid(format!("label {label} has an empty word")));
            }
            if !seen.insert(word.clone()) {
                return Err(invalid(format!("label {label} repeats the word `{word}`")));
            }
            set.push(word);
        }
        word_sets.push(set);
    }
    Ok(Verbalizer {
        id: id.to_string(),
        word_sets,
    })
}

impl Verbalizer {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn n_labels(&self) -> usize {
        self.word_sets.len()
    }

    pub fn words(&self, label: usize) -> &[String] {
        &self.word_sets[label]
    }

    /// Distinct words in first-appearance order (label order, then word order).
    pub fn candidates(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.word_sets
            .iter()
            .flatten()
            .filter(|w| seen.insert(w.as_str()))
            .cloned()
            .collect()
    }

    pub fn to_spec(&self) -> VerbalizerSpec {
        VerbalizerSpec {
            id: self.id.clone(),
            words: self.word_sets.iter().cloned().enumerate().collect(),
        }
    }
}

/// Label score = mean probability of the label's words, renormalized over
/// labels. Words shared across labels count for each of them.
pub fn aggregate_scores(word_probs: &HashMap<String, f64>, verbalizer: &Verbalizer) -> Result<LabelDistribution> {
    let mut means = Vec::with_capacity(verbalizer.n_labels());
    for words in &verbalizer.word_sets {
        let mut sum = 0.0;
        for word in words {
            let p = *word_probs.get(word).ok_or_else(|| Error::MissingWord(word.clone()))?;
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidScores(format!("probability of `{word}` is {p}")));
            }
            sum += p;
        }
        means.push(sum / words.len() as f64);
    }
    LabelDistribution::from_weights(means)
}

/// Lowercases keys so lookups match the normalized label words.
pub fn normalize_word_probs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> HashMap<String, f64> {
    pairs.into_iter().map(|(w, p)| (w.to_lowercase(), p)).collect()
}

pub fn load_verbalizers(path: impl AsRef<Path>, n_labels: usize) -> Result<Vec<Verbalizer>> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let specs: Vec<VerbalizerSpec> = serde_json::from_str(&raw).map_err(|e| Error::MalformedFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut out: Vec<Verbalizer> = Vec::with_capacity(specs.len());
    for spec in &specs {
        if out.iter().any(|v| v.id == spec.id) {
            return Err(Error::DuplicateId(spec.id.clone()));
        }
        out.push(parse_verbalizer(&spec.id, &spec.words, n_labels)?);
    }
    Ok(out)
}

const DEFAULT_WORDS: [[&[&str]; 14]; 4] = [
    [
        &["availability"],
        &["general"],
        &["general", "purchase"],
        &["help", "integrate", "product"],
        &["initiate", "sales"],
        &["issue", "handling"],
        &["order", "creation"],
        &["order", "fulfillment", "issues"],
        &["order", "processing"],
        &["other"],
        &["planning", "advice"],
        &["prepare", "exchange", "return"],
        &["product", "service", "information"],
        &["service", "fulfillment"],
    ],
    [
        &["availability", "stock", "order"],
        &["general", "membership"],
        &["general", "help"],
        &["assembly", "product"],
        &["aftersales"],
        &["issue", "refund"],
        &["order", "availability", "delivery"],
        &["order", "product", "refund", "fulfillment"],
        &["order", "address", "delivery"],
        &["other"],
        &["planning", "advice", "suggestion"],
        &["exchange", "return"],
        &["stock", "delivery", "information", "order"],
        &["service", "fulfillment"],
    ],
    [
        &["availability", "purchase"],
        &["general", "problem"],
        &["general", "purchase", "problem"],
        &["help", "integrate", "product", "purchase"],
        &["initiate", "sales", "problem"],
        &["issue", "handling", "refund"],
        &["order", "creation"],
        &["order", "fulfillment", "issue", "problem"],
        &["order", "processing"],
        &["other"],
        &["planning", "advice", "project"],
        &["prepare", "exchange", "return"],
        &["product", "service", "information", "order"],
        &["service", "fulfillment", "order"],
    ],
    [
        &["availability", "stock", "order", "purchase"],
        &["membership", "problem", "account"],
        &["general", "help", "problem"],
        &["assembly", "product", "purchase"],
        &["aftersales", "problem"],
        &["issue", "refund"],
        &["order", "availability", "delivery"],
        &["order", "product", "refund", "problem"],
        &["order", "address", "delivery"],
        &["other"],
        &["planning", "advice", "suggestion", "project"],
        &["exchange", "return"],
        &["stock", "delivery", "information", "order"],
        &["service", "fulfillment", "order"],
    ],
];

/// The four shipped verbalizers for the 14-label retail catalog, ids `1` to `4`.
pub fn default_verbalizers() -> Vec<Verbalizer> {
    DEFAULT_WORDS
        .iter()
        .enumerate()
        .map(|(i, table)| {
            let words = table
                .iter()
                .enumerate()
                .map(|(label, ws)| (label, ws.iter().map(|w| w.to_string()).collect()))
                .collect();
            parse_verbalizer(&(i + 1).to_string(), &words, 14).expect("built-in verbalizer is valid")
        })
        .collect()
}
