//! Dense text embeddings keyed by record id.
//!
//! File format: one `{"id": string, "vector": [numbers]}` object per line.
//! Values are written in shortest round-trip form, so save/load is bit-exact.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, ConversationRecord};
use crate::error::{Error, Result};
use crate::scoring::LogitServerBackend;

pub const EMBED_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EmbeddingRow {
    id: String,
    vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    rows: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    /// Builds a matrix; the dimension comes from the first row.
    pub fn from_rows(rows: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        let mut index = HashMap::new();
        let mut dim = None;
        for (id, vector) in rows {
            let expected = *dim.get_or_insert(vector.len());
            if expected == 0 {
                return Err(Error::InvalidEmbeddings(format!("row `{id}` is empty")));
            }
            if vector.len() != expected {
                return Err(Error::InvalidEmbeddings(format!(
                    "row `{id}` has dimension {}, expected {expected}",
                    vector.len()
                )));
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidEmbeddings(format!("row `{id}` has a non-finite value")));
            }
            if index.insert(id.clone(), ids.len()).is_some() {
                return Err(Error::DuplicateId(id));
            }
            ids.push(id);
            vectors.push(vector);
        }
        let dim = dim.ok_or_else(|| Error::InvalidEmbeddings("no rows".into()))?;
        Ok(Self {
            dim,
            ids,
            rows: vectors,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.rows[i].as_slice())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let rows: Vec<EmbeddingRow> = self
            .ids
            .iter()
            .zip(&self.rows)
            .map(|(id, vector)| EmbeddingRow {
                id: id.clone(),
                vector: vector.clone(),
            })
            .collect();
        write_jsonl(path.as_ref(), &rows)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: EmbeddingRow = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        rows.push((row.id, row.vector));
    }
    EmbeddingMatrix::from_rows(rows)
}

/// Embeds records through the server's `/embed` endpoint in batches of
/// [`EMBED_BATCH`], with at most `concurrency` batches in flight. Row `i`
/// belongs to record `i`.
pub fn fetch_embeddings(
    server: &LogitServerBackend,
    records: &[ConversationRecord],
    concurrency: usize,
) -> Result<EmbeddingMatrix> {
    if records.is_empty() {
        return Err(Error::InvalidEmbeddings("no records to embed".into()));
    }
    let batches: Vec<&[ConversationRecord]> = records.chunks(EMBED_BATCH).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let vectors: Vec<Vec<Vec<f64>>> = pool.install(|| {
        batches
            .par_iter()
            .map(|batch| {
                let texts: Vec<String> = batch.iter().map(|r| r.text.clone()).collect();
                server.embed(&texts)
            })
            .collect::<Result<_>>()
    })?;
    EmbeddingMatrix::from_rows(records.iter().map(|r| r.id.clone()).zip(vectors.into_iter().flatten()))
}
