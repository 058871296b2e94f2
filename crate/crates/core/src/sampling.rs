//! Few-shot subset selection per label: random, or active (closest to the
//! class centroid in embedding space).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Requested sample count per label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SamplingPlan(pub BTreeMap<usize, usize>);

impl SamplingPlan {
    pub fn get(&self, label: usize) -> usize {
        self.0.get(&label).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }

    /// Every count must be in `1..=class size`.
    pub fn check(&self, class_counts: &[usize]) -> Result<()> {
        for (&label, &count) in &self.0 {
            let size = *class_counts
                .get(label)
                .ok_or_else(|| Error::InvalidSampling(format!("plan names unknown label {label}")))?;
            if count == 0 || count > size {
                return Err(Error::InvalidSampling(format!(
                    "label {label}: {count} requested from a class of {size}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Random,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    Cosine,
}

/// `round_half_up(proportion * size)` clamped to `[1, size]` for each label.
pub fn allocate_counts(class_counts: &[usize], proportion: f64) -> Result<SamplingPlan> {
    if !(proportion > 0.0 && proportion <= 1.0) {
        return Err(Error::InvalidSampling(format!(
            "proportion {proportion} is outside (0, 1]"
        )));
    }
    let mut plan = BTreeMap::new();
    for (label, &size) in class_counts.iter().enumerate() {
        if size == 0 {
            return Err(Error::EmptyClass(label));
        }
        let raw = (proportion * size as f64 + 0.5).floor() as usize;
        plan.insert(label, raw.clamp(1, size));
    }
    Ok(SamplingPlan(plan))
}

/// Uniform per-label subsets, each label shuffled by its own stream.
/// Output is grouped by label in label order.
pub fn sample_random(dataset: &Dataset, plan: &SamplingPlan, seed: u64) -> Result<Vec<String>> {
    let groups = dataset.by_label();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    plan.check(&sizes)?;
    let mut selected = Vec::with_capacity(plan.total());
    for (&label, &count) in &plan.0 {
        let mut ids: Vec<&str> = groups[label].iter().map(|r| r.id.as_str()).collect();
        ids.shuffle(&mut rng::stream(seed, Domain::Sample, label as u64));
        selected.extend(ids.into_iter().take(count).map(String::from));
    }
    Ok(selected)
}

/// Mean of the rows for `ids`, summed in the given order.
pub fn class_centroid(embeddings: &EmbeddingMatrix, ids: &[&str]) -> Result<Vec<f64>> {
    if ids.is_empty() {
        return Err(Error::InvalidSampling("centroid of an empty set".into()));
    }
    let mut sum = vec![0.0; embeddings.dim()];
    for id in ids {
        let row = embeddings
            .get(id)
            .ok_or_else(|| Error::MissingEmbedding(id.to_string()))?;
        for (s, v) in sum.iter_mut().zip(row) {
            *s += v;
        }
    }
    let n = ids.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

fn distance(metric: DistanceMetric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        // Squared: same ordering, no rounding from a square root.
        DistanceMetric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        DistanceMetric::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                1.0 - dot / (na * nb)
            }
        }
    }
}

/// Per label, the planned number of records closest to the label centroid.
/// Ties go to the lexicographically smaller id. No randomness involved.
pub fn sample_active(
    dataset: &Dataset,
    embeddings: &EmbeddingMatrix,
    plan: &SamplingPlan,
    metric: DistanceMetric,
) -> Result<Vec<String>> {
    let groups = dataset.by_label();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    plan.check(&sizes)?;
    let mut selected = Vec::with_capacity(plan.total());
    for (&label, &count) in &plan.0 {
        let ids: Vec<&str> = groups[label].iter().map(|r| r.id.as_str()).collect();
        let centroid = class_centroid(embeddings, &ids)?;
        let mut scored: Vec<(f64, &str)> = ids
            .iter()
            .map(|&id| {
                let row = embeddings.get(id).expect("checked by class_centroid");
                (distance(metric, row, &centroid), id)
            })
            .collect();
        let by_distance = |a: &(f64, &str), b: &(f64, &str)| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1));
        if count < scored.len() {
            scored.select_nth_unstable_by(count, by_distance);
            scored.truncate(count);
        }
        scored.sort_unstable_by(by_distance);
        selected.extend(scored.into_iter().map(|(_, id)| id.to_string()));
    }
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ConversationRecord, LabelCatalog, LabelEntry};

    fn catalog(n: usize) -> LabelCatalog {
        LabelCatalog::new(
            (0..n)
                .map(|i| LabelEntry {
                    index: i,
                    name: format!("l{i}"),
                    description: String::new(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn labeled(points: &[(&str, usize, Vec<f64>)], n_labels: usize) -> (Dataset, EmbeddingMatrix) {
        let records = points
            .iter()
            .map(|(id, l, _)| ConversationRecord::new(*id, "t", Some(*l)))
            .collect();
        let emb = EmbeddingMatrix::from_rows(points.iter().map(|(id, _, v)| (id.to_string(), v.clone()))).unwrap();
        (Dataset::new(catalog(n_labels), records).unwrap(), emb)
    }

    const TABLE2: [usize; 14] = [951, 113, 108, 306, 907, 655, 1259, 997, 1069, 102, 192, 531, 283, 29];

    #[test]
    fn allocation_on_table2_counts() {
        let plan = allocate_counts(&TABLE2, 0.05).unwrap();
        assert_eq!(plan.get(6), 63); // 62.95
        assert_eq!(plan.get(13), 1); // 1.45
        assert_eq!(plan.get(0), 48); // 47.55
        let full = allocate_counts(&TABLE2, 1.0).unwrap();
        for (l, &n) in TABLE2.iter().enumerate() {
            assert_eq!(full.get(l), n);
        }
    }

    #[test]
    fn allocation_clamps_and_validates() {
        assert_eq!(allocate_counts(&[3], 0.01).unwrap().get(0), 1);
        assert_eq!(allocate_counts(&[10], 0.25).unwrap().get(0), 3); // 2.5 rounds up
        assert!(allocate_counts(&[3], 0.0).is_err());
        assert!(allocate_counts(&[3], 1.5).is_err());
        assert!(allocate_counts(&[3, 0], 0.5).is_err());
    }

    #[test]
    fn random_exhaustive_and_deterministic() {
        let (ds, _) = labeled(&[("a", 0, vec![0.0]), ("b", 0, vec![1.0])], 1);
        let plan = SamplingPlan([(0, 2)].into());
        let mut got = sample_random(&ds, &plan, 144).unwrap();
        got.sort();
        assert_eq!(got, ["a", "b"]);

        let points: Vec<(String, usize)> = (0..50).map(|i| (format!("r{i:02}"), i % 3)).collect();
        let records = points
            .iter()
            .map(|(id, l)| ConversationRecord::new(id.clone(), "t", Some(*l)))
            .collect();
        let ds = Dataset::new(catalog(3), records).unwrap();
        let plan = SamplingPlan([(0, 4), (1, 2), (2, 5)].into());
        let a = sample_random(&ds, &plan, 144).unwrap();
        assert_eq!(a, sample_random(&ds, &plan, 144).unwrap());
        assert_ne!(a, sample_random(&ds, &plan, 145).unwrap());
        assert_eq!(a.len(), 11);
    }

    #[test]
    fn random_rejects_oversized_plan() {
        let (ds, _) = labeled(&[("a", 0, vec![0.0])], 1);
        assert!(sample_random(&ds, &SamplingPlan([(0, 2)].into()), 1).is_err());
    }

    #[test]
    fn centroid_examples() {
        let emb = EmbeddingMatrix::from_rows([
            ("p".to_string(), vec![0.0, 0.0]),
            ("q".to_string(), vec![2.0, 0.0]),
            ("a".to_string(), vec![1.0, 1.0]),
            ("b".to_string(), vec![3.0, 1.0]),
            ("c".to_string(), vec![2.0, 4.0]),
        ])
        .unwrap();
        assert_eq!(class_centroid(&emb, &["p", "q"]).unwrap(), [1.0, 0.0]);
        assert_eq!(class_centroid(&emb, &["b"]).unwrap(), [3.0, 1.0]);
        assert_eq!(class_centroid(&emb, &["a", "b", "c"]).unwrap(), [2.0, 2.0]);
        assert!(class_centroid(&emb, &[]).is_err());
        assert!(matches!(class_centroid(&emb, &["zz"]), Err(Error::MissingEmbedding(_))));
    }

    // Points 0, 1, 2, 10: centroid 3.25, distances 3.25, 2.25, 1.25, 6.75.
    #[test]
    fn active_picks_closest() {
        let (ds, emb) = labeled(
            &[
                ("p0", 0, vec![0.0]),
                ("p1", 0, vec![1.0]),
                ("p2", 0, vec![2.0]),
                ("p10", 0, vec![10.0]),
            ],
            1,
        );
        let got = sample_active(&ds, &emb, &SamplingPlan([(0, 2)].into()), DistanceMetric::Euclidean).unwrap();
        assert_eq!(got, ["p2", "p1"]);
        let all = sample_active(&ds, &emb, &SamplingPlan([(0, 4)].into()), DistanceMetric::Euclidean).unwrap();
        assert_eq!(all.len(), 4);
    }

    #[test]
    fn active_tie_break_is_lexicographic() {
        let (ds, emb) = labeled(&[("zeta", 0, vec![-1.0]), ("alpha", 0, vec![1.0])], 1);
        let got = sample_active(&ds, &emb, &SamplingPlan([(0, 1)].into()), DistanceMetric::Euclidean).unwrap();
        assert_eq!(got, ["alpha"]);
    }

    #[test]
    fn active_needs_embeddings() {
        let (ds, _) = labeled(&[("a", 0, vec![0.0]), ("b", 0, vec![1.0])], 1);
        let emb = EmbeddingMatrix::from_rows([("a".to_string(), vec![0.0])]).unwrap();
        let err = sample_active(&ds, &emb, &SamplingPlan([(0, 1)].into()), DistanceMetric::Euclidean).unwrap_err();
        assert!(matches!(err, Error::MissingEmbedding(id) if id == "b"));
    }

    #[test]
    fn cosine_metric() {
        let (ds, emb) = labeled(
            &[
                ("a", 0, vec![1.0, 0.0]),
                ("b", 0, vec![0.0, 1.0]),
                ("c", 0, vec![10.0, 9.0]),
            ],
            1,
        );
        let got = sample_active(&ds, &emb, &SamplingPlan([(0, 1)].into()), DistanceMetric::Cosine).unwrap();
        assert_eq!(got, ["c"]);
    }
}
