//! Softmax normalization and ensembles of (template, verbalizer, backend)
//! models. Members' label distributions are summed and the argmax wins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::verbalizing::LabelDistribution;

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidScores("softmax of an empty vector".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidScores(format!("non-finite score {bad}")));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

pub fn softmax_normalize(scores: &[f64]) -> Result<LabelDistribution> {
    LabelDistribution::new(softmax(scores)?)
}

/// Weighted elementwise sum, renormalized. Weights default to 1.
pub fn combine_distributions(dists: &[LabelDistribution], weights: Option<&[f64]>) -> Result<LabelDistribution> {
    let first = dists
        .first()
        .ok_or_else(|| Error::InvalidScores("no distributions to combine".into()))?;
    if let Some(w) = weights {
        if w.len() != dists.len() {
            return Err(Error::InvalidScores(format!(
                "{} weights for {} distributions",
                w.len(),
                dists.len()
            )));
        }
        if let Some(bad) = w.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidScores(format!("weights must be positive, got {bad}")));
        }
    }
    // Exactly one member: the ensemble is that member.
    if dists.len() == 1 {
        return Ok(first.clone());
    }
    let n = first.len();
    let mut sum = vec![0.0; n];
    for (k, dist) in dists.iter().enumerate() {
        if dist.len() != n {
            return Err(Error::InvalidScores(format!(
                "distribution lengths {} and {} differ",
                n,
                dist.len()
            )));
        }
        let w = weights.map_or(1.0, |w| w[k]);
        for (acc, p) in sum.iter_mut().zip(dist.probs()) {
            *acc += w * p;
        }
    }
    let total_weight: f64 = weights.map_or(dists.len() as f64, |w| w.iter().sum());
    let mean: Vec<f64> = sum.into_iter().map(|s| s / total_weight).collect();
    LabelDistribution::from_weights(mean)
}

/// Argmax; ties go to the lowest label index.
pub fn predict_label(dist: &LabelDistribution) -> usize {
    let mut best = 0;
    for (i, &p) in dist.probs().iter().enumerate() {
        if p > dist.probs()[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub template_id: String,
    pub verbalizer_id: String,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(rename = "templates")]
    pub template_ids: Vec<String>,
    #[serde(rename = "verbalizers")]
    pub verbalizer_ids: Vec<String>,
    #[serde(rename = "backend")]
    pub backend_id: String,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (kind, ids) in [("template", &self.template_ids), ("verbalizer", &self.verbalizer_ids)] {
            if ids.is_empty() {
                return Err(Error::Config(format!("grid has no {kind}s")));
            }
            let mut seen = std::collections::HashSet::new();
            if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
                return Err(Error::Config(format!("grid lists {kind} `{dup}` twice")));
            }
        }
        Ok(())
    }
}

/// Cross product, templates outer and verbalizers inner.
pub fn expand_grid(grid: &GridSpec) -> Vec<ModelSpec> {
    grid.template_ids
        .iter()
        .flat_map(|t| {
            grid.verbalizer_ids.iter().map(move |v| ModelSpec {
                template_id: t.clone(),
                verbalizer_id: v.clone(),
                backend_id: grid.backend_id.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: &[f64]) -> LabelDistribution {
        LabelDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_normalize(&[0.0, 0.0]).unwrap().probs(), &[0.5, 0.5]);
        let d = softmax_normalize(&[2f64.ln(), 0.0]).unwrap();
        assert!((d.probs()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.probs()[1] - 1.0 / 3.0).abs() < 1e-15);
        let a = softmax_normalize(&[0.0, 5.0]).unwrap();
        let b = softmax_normalize(&[1234.5, 1239.5]).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_errors() {
        assert!(softmax_normalize(&[]).is_err());
        assert!(softmax_normalize(&[1.0, f64::INFINITY]).is_err());
        assert!(softmax_normalize(&[f64::NAN]).is_err());
        assert_eq!(softmax_normalize(&[1e308, -1e308]).unwrap().probs(), &[1.0, 0.0]);
    }

    #[test]
    fn combine_examples() {
        let same = combine_distributions(&[dist(&[0.3, 0.7]), dist(&[0.3, 0.7])], None).unwrap();
        assert!((same.probs()[0] - 0.3).abs() < 1e-12);
        let mixed = combine_distributions(&[dist(&[0.6, 0.4]), dist(&[0.2, 0.8])], None).unwrap();
        assert!((mixed.probs()[0] - 0.4).abs() < 1e-12);
        assert!((mixed.probs()[1] - 0.6).abs() < 1e-12);
        let weighted = combine_distributions(&[dist(&[1.0, 0.0]), dist(&[0.0, 1.0])], Some(&[3.0, 1.0])).unwrap();
        assert!((weighted.probs()[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn combine_errors() {
        assert!(combine_distributions(&[], None).is_err());
        assert!(combine_distributions(&[dist(&[1.0]), dist(&[0.5, 0.5])], None).is_err());
        assert!(combine_distributions(&[dist(&[1.0])], Some(&[0.0])).is_err());
        assert!(combine_distributions(&[dist(&[1.0])], Some(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn single_member_is_exact() {
        let d = dist(&[0.1, 0.2, 0.7]);
        assert_eq!(combine_distributions(std::slice::from_ref(&d), None).unwrap(), d);
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(predict_label(&dist(&[0.1, 0.7, 0.2])), 1);
        assert_eq!(predict_label(&dist(&[0.5, 0.5])), 0);
        assert_eq!(predict_label(&dist(&[1.0 / 14.0; 14])), 0);
    }

    #[test]
    fn grid_expansion() {
        let ids = |n: usize| (1..=n).map(|i| i.to_string()).collect::<Vec<_>>();
        let grid = GridSpec {
            template_ids: ids(4),
            verbalizer_ids: ids(4),
            backend_id: "toy".into(),
        };
        let specs = expand_grid(&grid);
        assert_eq!(specs.len(), 16);
        assert_eq!(
            (specs[1].template_id.as_str(), specs[1].verbalizer_id.as_str()),
            ("1", "2")
        );
        assert_eq!(
            (specs[4].template_id.as_str(), specs[4].verbalizer_id.as_str()),
            ("2", "1")
        );
        let row = GridSpec {
            template_ids: ids(1),
            ..grid.clone()
        };
        assert_eq!(expand_grid(&row).len(), 4);
        let one = GridSpec {
            template_ids: ids(1),
            verbalizer_ids: ids(1),
            backend_id: "toy".into(),
        };
        assert_eq!(expand_grid(&one).len(), 1);
        assert!(GridSpec {
            template_ids: vec!["1".into(), "1".into()],
            ..one.clone()
        }
        .validate()
        .is_err());
        assert!(GridSpec {
            verbalizer_ids: vec![],
            ..one
        }
        .validate()
        .is_err());
    }
}
