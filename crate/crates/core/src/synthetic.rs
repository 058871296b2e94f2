//! Synthetic clustered corpora for desk-scale experiments.
//!
//! Every class owns a token profile and a Gaussian cluster in embedding
//! space. Each record has a latent atypicality `u` in `[0, 1)`: atypical
//! records sit further from their cluster centre and borrow more of their
//! tokens from a confuser class and a shared pool. Records near the centroid
//! are therefore the cleanest examples of their class.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::corpus::{ConversationRecord, Dataset, LabelCatalog};
use crate::embeddings::EmbeddingMatrix;
use crate::error::Result;
use crate::rng::{self, Domain};

/// Label counts of the retail support corpus, in catalog order.
pub const RETAIL_COUNTS: [usize; 14] = [951, 113, 108, 306, 907, 655, 1259, 997, 1069, 102, 192, 531, 283, 29];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub class_sizes: Vec<usize>,
    pub dim: usize,
    pub profile_words: usize,
    pub shared_words: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Share of own-profile tokens in a perfectly typical record.
    pub own_share: f64,
    /// Drop in own-profile share from typical to most atypical.
    pub own_decay: f64,
    /// Share of the remaining tokens drawn from a confuser class rather
    /// than the shared pool.
    pub confuser_share: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Retail label proportions scaled to roughly `total` records, at least
    /// 4 per class.
    pub fn retail(total: usize, seed: u64) -> Self {
        let full: usize = RETAIL_COUNTS.iter().sum();
        let class_sizes = RETAIL_COUNTS
            .iter()
            .map(|&n| ((n * total) as f64 / full as f64).round().max(4.0) as usize)
            .collect();
        Self {
            class_sizes,
            dim: 16,
            profile_words: 12,
            shared_words: 60,
            min_tokens: 10,
            max_tokens: 24,
            own_share: 0.75,
            own_decay: 0.55,
            confuser_share: 0.5,
            seed,
        }
    }

    /// Same class sizes, but every record mixes its own profile with the
    /// shared pool only, at a fixed ratio.
    pub fn separable(total: usize, seed: u64) -> Self {
        Self {
            own_share: 0.5,
            own_decay: 0.0,
            confuser_share: 0.0,
            ..Self::retail(total, seed)
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub dataset: Dataset,
    pub embeddings: EmbeddingMatrix,
}

pub fn generate(spec: &SyntheticSpec, catalog: &LabelCatalog) -> Result<SyntheticCorpus> {
    let n_classes = spec.class_sizes.len();
    let mut setup = rng::stream(spec.seed, Domain::Synthetic, u64::MAX);
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| {
            (0..spec.dim)
                .map(|_| 3.0 * setup.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let mut records = Vec::new();
    let mut rows = Vec::new();
    for (class, &size) in spec.class_sizes.iter().enumerate() {
        let mut rng = rng::stream(spec.seed, Domain::Synthetic, class as u64);
        for j in 0..size {
            let atypicality: f64 = rng.random();
            let spread = (0.3 + 1.5 * atypicality) / (spec.dim as f64).sqrt();
            let vector: Vec<f64> = centers[class]
                .iter()
                .map(|c| c + spread * rng.sample::<f64, _>(StandardNormal))
                .collect();

            let own = spec.own_share - spec.own_decay * atypicality;
            let confuser = loop {
                let c = rng.random_range(0..n_classes);
                if c != class || n_classes == 1 {
                    break c;
                }
            };
            let len = rng.random_range(spec.min_tokens..=spec.max_tokens);
            let mut tokens = Vec::with_capacity(len + 2);
            tokens.push(if rng.random_bool(0.5) { "customer:" } else { "agent:" }.to_string());
            for _ in 0..len {
                let draw: f64 = rng.random();
                let token = if draw < own {
                    profile_word(class, rng.random_range(0..spec.profile_words))
                } else if draw < own + (1.0 - own) * spec.confuser_share {
                    profile_word(confuser, rng.random_range(0..spec.profile_words))
                } else {
                    format!("s{}", rng.random_range(0..spec.shared_words))
                };
                tokens.push(token);
            }
            let id = format!("c{class:02}-{j:05}");
            records.push(ConversationRecord::new(id.clone(), tokens.join(" "), Some(class)));
            rows.push((id, vector));
        }
    }
    Ok(SyntheticCorpus {
        dataset: Dataset::new(catalog.clone(), records)?,
        embeddings: EmbeddingMatrix::from_rows(rows)?,
    })
}

fn profile_word(class: usize, j: usize) -> String {
    format!("k{class}w{j}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::label_distribution;

    #[test]
    fn retail_spec_scales_counts() {
        let spec = SyntheticSpec::retail(2100, 1);
        assert_eq!(spec.class_sizes.len(), 14);
        assert!(spec.class_sizes.iter().sum::<usize>() >= 2000);
        assert!(spec.class_sizes.iter().all(|&n| n >= 4));
    }

    #[test]
    fn generation_is_deterministic() {
        let catalog = LabelCatalog::retail_default();
        let spec = SyntheticSpec::retail(300, 9);
        let a = generate(&spec, &catalog).unwrap();
        let b = generate(&spec, &catalog).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(label_distribution(&a.dataset), spec.class_sizes);
        assert_eq!(a.embeddings.len(), a.dataset.len());
    }
}
