//! Trainable toy backend: a multinomial Naive Bayes model whose classes are
//! the target label words. It stands in for prompt-based fine-tuning so the
//! sample → fit → score → verbalize → evaluate loop runs without a GPU.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_candidates, tokenize, CandidateScores, ScoringBackend};
use crate::corpus::write_json;
use crate::error::{Error, Result};
use crate::prompting::FilledPrompt;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub prompt_text: String,
    pub target_word: String,
}

impl TrainingPair {
    pub fn new(prompt_text: impl Into<String>, target_word: impl Into<String>) -> Self {
        Self {
            prompt_text: prompt_text.into(),
            target_word: target_word.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyClass {
    pub word: String,
    /// Number of training pairs with this target.
    pub pairs: u64,
    pub prior: f64,
    pub token_total: u64,
    pub token_counts: BTreeMap<String, u64>,
}

/// Fitted toy model. Serializes to a portable JSON state file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub name: String,
    pub alpha: f64,
    pub n_pairs: u64,
    pub vocabulary: BTreeSet<String>,
    pub classes: Vec<ToyClass>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

/// Fits class priors (proportional to pair counts) and Laplace-smoothed
/// token likelihoods. Target words are lowercased.
pub fn toy_fit(name: &str, pairs: &[TrainingPair], alpha: f64) -> Result<ToyModel> {
    if pairs.is_empty() {
        return Err(Error::InvalidTraining("no training pairs".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidTraining(format!(
            "smoothing must be positive, got {alpha}"
        )));
    }
    let mut by_word: BTreeMap<String, (u64, BTreeMap<String, u64>)> = BTreeMap::new();
    let mut vocabulary = BTreeSet::new();
    for pair in pairs {
        let word = pair.target_word.trim().to_lowercase();
        if word.is_empty() {
            return Err(Error::InvalidTraining("empty target word".into()));
        }
        let (count, tokens) = by_word.entry(word).or_default();
        *count += 1;
        for token in tokenize(&pair.prompt_text) {
            vocabulary.insert(token.clone());
            *tokens.entry(token).or_default() += 1;
        }
    }
    let n_pairs = pairs.len() as u64;
    let classes = by_word
        .into_iter()
        .map(|(word, (count, token_counts))| ToyClass {
            word,
            pairs: count,
            prior: count as f64 / n_pairs as f64,
            token_total: token_counts.values().sum(),
            token_counts,
        })
        .collect();
    Ok(ToyModel::assemble(
        name.to_string(),
        alpha,
        n_pairs,
        vocabulary,
        classes,
    ))
}

impl ToyModel {
    fn assemble(name: String, alpha: f64, n_pairs: u64, vocabulary: BTreeSet<String>, classes: Vec<ToyClass>) -> Self {
        let index = classes.iter().enumerate().map(|(i, c)| (c.word.clone(), i)).collect();
        Self {
            name,
            alpha,
            n_pairs,
            vocabulary,
            classes,
            index,
        }
    }

    pub fn class(&self, word: &str) -> Option<&ToyClass> {
        self.index.get(&word.to_lowercase()).map(|&i| &self.classes[i])
    }

    /// Log prior of a word never seen as a target: one pseudo-pair on top of
    /// the training pairs.
    pub fn background_log_prior(&self) -> f64 {
        -((self.n_pairs + 1) as f64).ln()
    }

    /// Per-candidate log joint score of the prompt. Prompt tokens outside the
    /// training vocabulary are ignored. Unseen candidates get the background
    /// class, whose token distribution is uniform over the vocabulary.
    pub fn log_scores(&self, prompt_text: &str, candidates: &[String]) -> Vec<f64> {
        let tokens: Vec<String> = tokenize(prompt_text).filter(|t| self.vocabulary.contains(t)).collect();
        let vocab = self.vocabulary.len() as f64;
        candidates
            .iter()
            .map(|candidate| match self.class(candidate) {
                Some(class) => {
                    let denom = (class.token_total as f64 + self.alpha * vocab).ln();
                    let likelihood: f64 = tokens
                        .iter()
                        .map(|t| {
                            let count = class.token_counts.get(t).copied().unwrap_or(0) as f64;
                            (count + self.alpha).ln() - denom
                        })
                        .sum();
                    class.prior.ln() + likelihood
                }
                None => self.background_log_prior() - tokens.len() as f64 * vocab.ln(),
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let state: ToyModel = serde_json::from_str(&raw).map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if state.alpha.is_nan() || state.alpha <= 0.0 || state.classes.is_empty() {
            return Err(Error::MalformedFile {
                path: path.to_path_buf(),
                message: "toy state needs positive smoothing and at least one class".into(),
            });
        }
        Ok(Self::assemble(
            state.name,
            state.alpha,
            state.n_pairs,
            state.vocabulary,
            state.classes,
        ))
    }
}

impl ScoringBackend for ToyModel {
    fn id(&self) -> &str {
        &self.name
    }

    fn score_candidates(&self, prompt: &FilledPrompt, candidates: &[String]) -> Result<CandidateScores> {
        check_candidates(candidates)?;
        CandidateScores::new(candidates.to_vec(), self.log_scores(&prompt.text, candidates))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(text: &str) -> FilledPrompt {
        FilledPrompt {
            text: text.into(),
            template_id: "t".into(),
            record_id: "r".into(),
            truncated: false,
        }
    }

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|w| w.to_string()).collect()
    }

    // One pair "order late" -> "order", alpha 1, vocabulary {order, late}.
    // score(order)  = ln 1 + 2 ln((1+1)/(2+1*2)) = 2 ln(1/2)
    // score(return) = ln(1/(1+1)) + 2 ln(1/2)    = 3 ln(1/2)
    // gap = ln 2.
    #[test]
    fn single_pair_closed_form() {
        let m = toy_fit("toy", &[TrainingPair::new("order late", "order")], 1.0).unwrap();
        assert_eq!(m.vocabulary.len(), 2);
        let s = m
            .score_candidates(&prompt("order late"), &words(&["order", "return"]))
            .unwrap();
        let half = 0.5f64.ln();
        assert!((s.scores[0] - 2.0 * half).abs() < 1e-12);
        assert!((s.scores[1] - 3.0 * half).abs() < 1e-12);
        assert!((s.scores[0] - s.scores[1] - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_class_wins_among_seen() {
        let m = toy_fit(
            "toy",
            &[TrainingPair::new("a b", "x"), TrainingPair::new("c", "x")],
            0.5,
        )
        .unwrap();
        for text in ["a", "c c c", "zzz", ""] {
            let s = m.score_candidates(&prompt(text), &words(&["y", "x"])).unwrap();
            assert_eq!(s.argmax(), Some(1), "{text}");
        }
    }

    // Disjoint profiles: class x saw {a:2}, class y saw {b:2}; alpha 1, |V| 2.
    // For prompt "a": x = ln(1/2) + ln(3/4), y = ln(1/2) + ln(1/4).
    #[test]
    fn disjoint_profiles() {
        let pairs = [TrainingPair::new("a a", "x"), TrainingPair::new("b b", "y")];
        let m = toy_fit("toy", &pairs, 1.0).unwrap();
        let s = m.score_candidates(&prompt("a"), &words(&["x", "y"])).unwrap();
        assert!((s.scores[0] - (0.5f64.ln() + 0.75f64.ln())).abs() < 1e-12);
        assert!((s.scores[1] - (0.5f64.ln() + 0.25f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn duplicate_pairs_double_prior() {
        let pairs = [
            TrainingPair::new("a", "x"),
            TrainingPair::new("a", "x"),
            TrainingPair::new("b", "y"),
        ];
        let m = toy_fit("toy", &pairs, 1.0).unwrap();
        assert!((m.class("x").unwrap().prior - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.class("y").unwrap().prior - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fit_errors() {
        assert!(toy_fit("toy", &[], 1.0).is_err());
        assert!(toy_fit("toy", &[TrainingPair::new("a", "x")], 0.0).is_err());
        assert!(toy_fit("toy", &[TrainingPair::new("a", "x")], -1.0).is_err());
        assert!(toy_fit("toy", &[TrainingPair::new("a", " ")], 1.0).is_err());
    }

    #[test]
    fn unseen_tokens_stay_finite() {
        let m = toy_fit(
            "toy",
            &[TrainingPair::new("alpha", "x"), TrainingPair::new("beta", "y")],
            1e-6,
        )
        .unwrap();
        let s = m
            .score_candidates(&prompt("beta beta gamma"), &words(&["x", "y", "z"]))
            .unwrap();
        assert!(s.scores.iter().all(|v| v.is_finite()));
        assert_eq!(s.argmax(), Some(1));
    }

    #[test]
    fn state_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.json");
        let pairs = [
            TrainingPair::new("order late", "Order"),
            TrainingPair::new("refund now", "refund"),
        ];
        let m = toy_fit("toy", &pairs, 0.7).unwrap();
        m.save(&path).unwrap();
        let back = ToyModel::load(&path).unwrap();
        assert_eq!(back, m);
        let c = words(&["order", "refund", "other"]);
        assert_eq!(
            back.score_candidates(&prompt("late order"), &c).unwrap(),
            m.score_candidates(&prompt("late order"), &c).unwrap()
        );
    }
}
