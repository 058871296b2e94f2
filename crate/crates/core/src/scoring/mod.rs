//! Scoring backends.
//!
//! A backend assigns one unnormalized score (higher is more likely) to each
//! candidate answer string for a filled prompt. Scores are treated as logits:
//! [`CandidateScores::probabilities`] softmaxes them into per-word
//! probabilities for the verbalizer.

mod chat;
mod http;
mod logit;
mod mock;
mod toy;

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use chat::{chat_classify, parse_index_response, ChatClient, ParsedLabel, INDEX_INSTRUCTION};
pub use http::{HttpClient, RetryPolicy};
pub use logit::{EmbedRequest, EmbedResponse, LogitServerBackend, ScoreRequest, ScoreResponse};
pub use mock::MockBackend;
pub use toy::{toy_fit, ToyClass, ToyModel, TrainingPair};

use crate::ensembling::softmax;
use crate::error::{Error, Result};
use crate::prompting::FilledPrompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScores {
    pub candidates: Vec<String>,
    pub scores: Vec<f64>,
}

impl CandidateScores {
    pub fn new(candidates: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        if candidates.len() != scores.len() {
            return Err(Error::InvalidScores(format!(
                "{} candidates but {} scores",
                candidates.len(),
                scores.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::InvalidScores(format!("non-finite score {bad}")));
        }
        Ok(Self { candidates, scores })
    }

    /// Index of the highest score, first one on ties.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &s) in self.scores.iter().enumerate() {
            if best.is_none_or(|b| s > self.scores[b]) {
                best = Some(i);
            }
        }
        best
    }

    /// Softmax over candidates, keyed by lowercased word.
    pub fn probabilities(&self) -> Result<HashMap<String, f64>> {
        let probs = softmax(&self.scores)?;
        Ok(self.candidates.iter().map(|c| c.to_lowercase()).zip(probs).collect())
    }

    /// Scores restricted to `words`, in that order.
    pub fn select(&self, words: &[String]) -> Result<CandidateScores> {
        let index: HashMap<&str, usize> = self
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let mut scores = Vec::with_capacity(words.len());
        for w in words {
            let i = *index.get(w.as_str()).ok_or_else(|| Error::MissingWord(w.clone()))?;
            scores.push(self.scores[i]);
        }
        CandidateScores::new(words.to_vec(), scores)
    }
}

/// Anything that scores candidate answers for a filled prompt.
pub trait ScoringBackend: Send + Sync {
    fn id(&self) -> &str;

    fn score_candidates(&self, prompt: &FilledPrompt, candidates: &[String]) -> Result<CandidateScores>;
}

pub(crate) fn check_candidates(candidates: &[String]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::InvalidCandidates("empty candidate list".into()));
    }
    let mut seen = HashSet::with_capacity(candidates.len());
    for c in candidates {
        if !seen.insert(c.as_str()) {
            return Err(Error::InvalidCandidates(format!("duplicate candidate `{c}`")));
        }
    }
    Ok(())
}

/// Lowercase, split on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Mock,
    Toy,
    LogitServer,
    Chat,
}

impl BackendKind {
    pub fn is_network(self) -> bool {
        matches!(self, BackendKind::LogitServer | BackendKind::Chat)
    }
}

fn default_timeout() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    3
}

fn default_concurrency() -> usize {
    4
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Identifier used for cache keys and reports; defaults to the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// In-flight request limit for network backends.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Laplace smoothing for the toy backend.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Fitted toy model to load instead of training one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<PathBuf>,
}

impl BackendConfig {
    pub fn new(kind: BackendKind) -> Self {
        Self {
            kind,
            id: None,
            endpoint: None,
            model: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            concurrency: default_concurrency(),
            alpha: default_alpha(),
            state: None,
        }
    }

    pub fn with_endpoint(mut self, endpoint: impl Into<String>) -> Self {
        self.endpoint = Some(endpoint.into());
        self
    }

    pub fn backend_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            match self.kind {
                BackendKind::Mock => "mock",
                BackendKind::Toy => "toy",
                BackendKind::LogitServer => "logit-server",
                BackendKind::Chat => "chat",
            }
            .to_string()
        })
    }

    /// Fills a missing chat endpoint from `PL_API_BASE`, then checks that an
    /// endpoint is present exactly for network kinds.
    pub fn resolve(mut self) -> Result<Self> {
        if self.kind == BackendKind::Chat && self.endpoint.is_none() {
            self.endpoint = std::env::var("PL_API_BASE").ok().filter(|s| !s.is_empty());
        }
        match (self.kind.is_network(), &self.endpoint) {
            (true, None) => {
                return Err(Error::Config(format!(
                    "backend `{}` needs an endpoint",
                    self.backend_id()
                )))
            }
            (false, Some(_)) => {
                return Err(Error::Config(format!(
                    "backend `{}` is local and takes no endpoint",
                    self.backend_id()
                )))
            }
            _ => {}
        }
        if self.kind == BackendKind::Chat && self.model.is_none() {
            return Err(Error::Config("chat backend needs a model name".into()));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 || self.concurrency == 0 {
            return Err(Error::Config("timeout and concurrency must be positive".into()));
        }
        if self.state.is_some() && self.kind != BackendKind::Toy {
            return Err(Error::Config("only the toy backend takes a fitted state".into()));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(Error::Config(format!("smoothing must be positive, got {}", self.alpha)));
        }
        Ok(self)
    }

    pub fn http_client(&self) -> HttpClient {
        HttpClient::new(
            Duration::from_secs_f64(self.timeout_secs),
            RetryPolicy {
                max_retries: self.max_retries,
                ..RetryPolicy::default()
            },
            self.concurrency,
        )
    }
}
