use std::collections::HashSet;

use super::{check_candidates, tokenize, CandidateScores, ScoringBackend};
use crate::error::Result;
use crate::prompting::FilledPrompt;

/// Deterministic test backend: a candidate's score is the number of its
/// distinct tokens that also occur in the prompt.
#[derive(Debug, Clone)]
pub struct MockBackend {
    id: String,
}

impl MockBackend {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into() }
    }

    /// Candidate indices from best to worst. Equal scores are ordered by a
    /// stable FNV-1a hash of the candidate, then by position.
    pub fn rank(scores: &CandidateScores) -> Vec<usize> {
        let mut order: Vec<usize> = (0..scores.candidates.len()).collect();
        order.sort_by(|&a, &b| {
            scores.scores[b]
                .total_cmp(&scores.scores[a])
                .then_with(|| fnv1a(&scores.candidates[a]).cmp(&fnv1a(&scores.candidates[b])))
                .then(a.cmp(&b))
        });
        order
    }
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new("mock")
    }
}

impl ScoringBackend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn score_candidates(&self, prompt: &FilledPrompt, candidates: &[String]) -> Result<CandidateScores> {
        check_candidates(candidates)?;
        let prompt_tokens: HashSet<String> = tokenize(&prompt.text).collect();
        let scores = candidates
            .iter()
            .map(|c| {
                let own: HashSet<String> = tokenize(c).collect();
                own.iter().filter(|t| prompt_tokens.contains(*t)).count() as f64
            })
            .collect();
        CandidateScores::new(candidates.to_vec(), scores)
    }
}

pub(crate) fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}
