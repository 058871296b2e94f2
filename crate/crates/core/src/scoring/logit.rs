use serde::{Deserialize, Serialize};

use super::{check_candidates, CandidateScores, HttpClient, ScoringBackend};
use crate::error::{Error, Result};
use crate::prompting::FilledPrompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
}

/// Client for a remote server exposing `/score` and `/embed`.
#[derive(Debug, Clone)]
pub struct LogitServerBackend {
    id: String,
    endpoint: String,
    http: HttpClient,
}

impl LogitServerBackend {
    pub fn new(id: impl Into<String>, endpoint: impl Into<String>, http: HttpClient) -> Self {
        Self {
            id: id.into(),
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            http,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// One `/embed` call. The reply must hold one vector per text.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let url = format!("{}/embed", self.endpoint);
        let reply: EmbedResponse = self.http.post_json(&url, &EmbedRequest { texts: texts.to_vec() })?;
        if reply.vectors.len() != texts.len() {
            return Err(Error::Protocol {
                url,
                message: format!("{} vectors for {} texts", reply.vectors.len(), texts.len()),
            });
        }
        Ok(reply.vectors)
    }
}

impl ScoringBackend for LogitServerBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn score_candidates(&self, prompt: &FilledPrompt, candidates: &[String]) -> Result<CandidateScores> {
        check_candidates(candidates)?;
        let url = format!("{}/score", self.endpoint);
        let reply: ScoreResponse = self.http.post_json(
            &url,
            &ScoreRequest {
                prompt: prompt.text.clone(),
                candidates: candidates.to_vec(),
            },
        )?;
        if reply.scores.len() != candidates.len() {
            return Err(Error::Protocol {
                url,
                message: format!("{} scores for {} candidates", reply.scores.len(), candidates.len()),
            });
        }
        CandidateScores::new(candidates.to_vec(), reply.scores).map_err(|e| Error::Protocol {
            url,
            message: e.to_string(),
        })
    }
}
