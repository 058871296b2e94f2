use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::write_json;
use crate::error::{Error, Result};
use crate::prompting::FilledPrompt;
use crate::scoring::{CandidateScores, ScoringBackend};

/// Hex SHA-256 over the length-prefixed candidate strings.
pub fn candidate_digest(candidates: &[String]) -> String {
    let mut hasher = Sha256::new();
    for c in candidates {
        hasher.update((c.len() as u64).to_le_bytes());
        hasher.update(c.as_bytes());
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    record: String,
    digest: String,
    candidates: Vec<String>,
    scores: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheFile {
    backend: String,
    template: String,
    entries: Vec<CacheEntry>,
}

type Shard = BTreeMap<(String, String), CandidateScores>;

/// Scores keyed by (backend, template, record, candidate digest). Readers
/// share the lock; inserts take it exclusively.
#[derive(Debug, Default)]
pub struct ScoreCache {
    dir: Option<PathBuf>,
    shards: RwLock<BTreeMap<(String, String), Shard>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens a cache directory, loading every file already in it.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let mut shards = BTreeMap::new();
        if dir.exists() {
            let listing = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut paths: Vec<PathBuf> = listing
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            for path in paths {
                let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let file: CacheFile = serde_json::from_str(&raw).map_err(|e| Error::MalformedFile {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                let shard: &mut Shard = shards.entry((file.backend, file.template)).or_default();
                for entry in file.entries {
                    let scores = CandidateScores::new(entry.candidates, entry.scores)?;
                    shard.insert((entry.record, entry.digest), scores);
                }
            }
        }
        Ok(Self {
            dir: Some(dir),
            shards: RwLock::new(shards),
            ..Self::default()
        })
    }

    pub fn get(&self, backend: &str, template: &str, record: &str, candidates: &[String]) -> Option<CandidateScores> {
        let key = (record.to_string(), candidate_digest(candidates));
        let shards = self.shards.read().expect("cache lock poisoned");
        let found = shards
            .get(&(backend.to_string(), template.to_string()))
            .and_then(|shard| shard.get(&key))
            .filter(|s| s.candidates == candidates)
            .cloned();
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    pub fn insert(&self, backend: &str, template: &str, record: &str, scores: CandidateScores) {
        let key = (record.to_string(), candidate_digest(&scores.candidates));
        self.shards
            .write()
            .expect("cache lock poisoned")
            .entry((backend.to_string(), template.to_string()))
            .or_default()
            .insert(key, scores);
    }

    /// Cached scores for the prompt, or a fresh backend call whose result
    /// is stored.
    pub fn get_or_score(
        &self,
        backend: &dyn ScoringBackend,
        prompt: &FilledPrompt,
        candidates: &[String],
    ) -> Result<CandidateScores> {
        if let Some(hit) = self.get(backend.id(), &prompt.template_id, &prompt.record_id, candidates) {
            return Ok(hit);
        }
        let scores = backend.score_candidates(prompt, candidates)?;
        self.insert(backend.id(), &prompt.template_id, &prompt.record_id, scores.clone());
        Ok(scores)
    }

    pub fn len(&self) -> usize {
        self.shards
            .read()
            .expect("cache lock poisoned")
            .values()
            .map(BTreeMap::len)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    /// Writes one file per (backend, template). No-op for in-memory caches.
    pub fn persist(&self) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let shards = self.shards.read().expect("cache lock poisoned");
        for ((backend, template), shard) in shards.iter() {
            let file = CacheFile {
                backend: backend.clone(),
                template: template.clone(),
                entries: shard
                    .iter()
                    .map(|((record, digest), s)| CacheEntry {
                        record: record.clone(),
                        digest: digest.clone(),
                        candidates: s.candidates.clone(),
                        scores: s.scores.clone(),
                    })
                    .collect(),
            };
            write_json(&dir.join(shard_file_name(backend, template)), &file)?;
        }
        Ok(())
    }
}

/// Readable, filesystem-safe name with a hash suffix against collisions.
fn shard_file_name(backend: &str, template: &str) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect()
    };
    let tag = candidate_digest(&[backend.to_string(), template.to_string()]);
    format!("{}__{}__{}.json", clean(backend), clean(template), &tag[..12])
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::MockBackend;
    use std::sync::atomic::AtomicUsize;

    struct Counting {
        inner: MockBackend,
        calls: AtomicUsize,
    }

    impl ScoringBackend for Counting {
        fn id(&self) -> &str {
            self.inner.id()
        }

        fn score_candidates(&self, prompt: &FilledPrompt, candidates: &[String]) -> Result<CandidateScores> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.score_candidates(prompt, candidates)
        }
    }

    fn words(w: &[&str]) -> Vec<String> {
        w.iter().map(|s| s.to_string()).collect()
    }

    fn prompt() -> FilledPrompt {
        FilledPrompt {
            text: "my order is late <MASK>".into(),
            template_id: "1".into(),
            record_id: "r1".into(),
            truncated: false,
        }
    }

    #[test]
    fn hit_returns_stored_scores() {
        let cache = ScoreCache::in_memory();
        let backend = Counting {
            inner: MockBackend::default(),
            calls: AtomicUsize::new(0),
        };
        let c = words(&["order", "refund"]);
        let first = cache.get_or_score(&backend, &prompt(), &c).unwrap();
        let second = cache.get_or_score(&backend, &prompt(), &c).unwrap();
        assert_eq!(first, second);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
        assert_eq!((cache.hits(), cache.misses()), (1, 1));
    }

    #[test]
    fn different_candidates_miss() {
        let cache = ScoreCache::in_memory();
        let c = words(&["order", "refund"]);
        cache.insert(
            "mock",
            "1",
            "r1",
            CandidateScores::new(c.clone(), vec![1.0, 0.0]).unwrap(),
        );
        assert!(cache.get("mock", "1", "r1", &words(&["refund", "order"])).is_none());
        assert!(cache.get("mock", "2", "r1", &c).is_none());
        assert!(cache.get("other", "1", "r1", &c).is_none());
        assert!(cache.get("mock", "1", "r1", &c).is_some());
    }

    #[test]
    fn digest_is_unambiguous() {
        assert_ne!(
            candidate_digest(&words(&["ab", "c"])),
            candidate_digest(&words(&["a", "bc"]))
        );
        assert_eq!(candidate_digest(&words(&["x"])).len(), 64);
    }

    #[test]
    fn persist_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ScoreCache::open(dir.path().join("cache")).unwrap();
        let c = words(&["order", "refund"]);
        cache.insert(
            "mock",
            "1",
            "r1",
            CandidateScores::new(c.clone(), vec![0.1, 1.0 / 3.0]).unwrap(),
        );
        cache.insert(
            "mock",
            "t/2",
            "r1",
            CandidateScores::new(c.clone(), vec![2.0, 3.0]).unwrap(),
        );
        cache.persist().unwrap();
        assert_eq!(fs::read_dir(dir.path().join("cache")).unwrap().count(), 2);
        let reopened = ScoreCache::open(dir.path().join("cache")).unwrap();
        assert_eq!(reopened.len(), 2);
        assert_eq!(
            reopened.get("mock", "1", "r1", &c).unwrap().scores,
            vec![0.1, 1.0 / 3.0]
        );
        assert_eq!(reopened.get("mock", "t/2", "r1", &c).unwrap().scores, vec![2.0, 3.0]);
    }
}
