//! Per-instance choice among candidate models by normalized Chamfer distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{chamfer_distance, normalize_cloud, GeometryError, PointCloud};
use crate::scalar::Real;

/// Default number of candidate models per instance.
pub const DEFAULT_CANDIDATES: usize = 5;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("instance {0}: no candidates")]
    NoCandidates(String),
    #[error("instance {id}: {count} candidates exceed the limit of {limit}")]
    TooManyCandidates { id: String, count: usize, limit: usize },
    #[error("instance {id}: candidate {index} is empty")]
    EmptyCandidate { id: String, index: usize },
    #[error("instance {0}: every candidate is degenerate")]
    AllDegenerate(String),
    #[error("instance {id}: target cloud: {source}")]
    Target { id: String, source: GeometryError },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet<T> {
    pub instance_id: String,
    pub candidates: Vec<(usize, PointCloud<T>)>,
}

impl<T: Real> CandidateSet<T> {
    /// Indexes `clouds` from 0 in order.
    pub fn new(instance_id: impl Into<String>, clouds: Vec<PointCloud<T>>, limit: usize) -> Result<Self, SelectionError> {
        let id = instance_id.into();
        if clouds.is_empty() {
            return Err(SelectionError::NoCandidates(id));
        }
        if clouds.len() > limit {
            return Err(SelectionError::TooManyCandidates { id, count: clouds.len(), limit });
        }
        if let Some(index) = clouds.iter().position(|c| c.is_empty()) {
            return Err(SelectionError::EmptyCandidate { id, index });
        }
        Ok(Self { instance_id: id, candidates: clouds.into_iter().enumerate().collect() })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Cloud for candidate index `k`.
    pub fn get(&self, k: usize) -> Option<&PointCloud<T>> {
        self.candidates.iter().find(|(i, _)| *i == k).map(|(_, c)| c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport<T> {
    pub instance_id: String,
    /// Normalized Chamfer distance per candidate, in candidate order;
    /// `None` for the random passthrough. Degenerate candidates score `+inf`
    /// (written as `null` in JSON).
    pub scores: Option<Vec<T>>,
    pub chosen: usize,
}

/// Scores every candidate against the target after normalizing both sides
/// and returns the argmin (lowest index on ties).
pub fn select_model<T: Real>(candidates: &CandidateSet<T>, target: &PointCloud<T>) -> Result<SelectionReport<T>, SelectionError> {
    let id = &candidates.instance_id;
    let (target_n, _) =
        normalize_cloud(target).map_err(|source| SelectionError::Target { id: id.clone(), source })?;
    let scores: Vec<T> = candidates
        .candidates
        .iter()
        .map(|(_, cloud)| match normalize_cloud(cloud) {
            Ok((n, _)) => chamfer_distance(&n, &target_n).unwrap_or(T::infinity()),
            Err(_) => T::infinity(),
        })
        .collect();
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b| *s < scores[b]) {
            best = Some(i);
        }
    }
    let best = best.ok_or_else(|| SelectionError::AllDegenerate(id.clone()))?;
    Ok(SelectionReport {
        instance_id: id.clone(),
        scores: Some(scores),
        chosen: candidates.candidates[best].0,
    })
}

/// Uniformly random candidate from a seeded generator; used for the
/// "no model selection" ablation.
pub fn selection_ablation_passthrough<T: Real>(candidates: &CandidateSet<T>, seed: u64) -> SelectionReport<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = rng.random_range(0..candidates.candidates.len());
    SelectionReport { instance_id: candidates.instance_id.clone(), scores: None, chosen: candidates.candidates[pick].0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_transform, EulerRotation, LayoutParams};
    use rand::Rng;

    fn blob(seed: u64, n: usize) -> PointCloud<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new((0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>() * 0.3, rng.random::<f64>() * 2.0]).collect()).unwrap()
    }

    #[test]
    fn exact_copy_wins_with_zero_score() {
        let target = blob(1, 64);
        let rotated = apply_transform(&target, &LayoutParams::new([0.0; 3], EulerRotation::new(0.0, 1.2, 0.3), 1.0).unwrap()).unwrap();
        let set = CandidateSet::new("a", vec![rotated, target.clone(), blob(9, 64)], 5).unwrap();
        let rep = select_model(&set, &target).unwrap();
        assert_eq!(rep.chosen, 1);
        assert_eq!(rep.scores.as_ref().unwrap()[1], 0.0);
        assert_eq!(rep.scores.unwrap().len(), 3);
    }

    #[test]
    fn single_candidate_always_chosen() {
        let set = CandidateSet::new("a", vec![blob(2, 10)], 5).unwrap();
        assert_eq!(select_model(&set, &blob(3, 20)).unwrap().chosen, 0);
    }

    #[test]
    fn degenerate_candidates() {
        let flat = PointCloud::new(vec![[1.0, 1.0, 1.0]; 4]).unwrap();
        let set = CandidateSet::new("a", vec![flat.clone(), blob(4, 16)], 5).unwrap();
        let rep = select_model(&set, &blob(5, 16)).unwrap();
        assert_eq!(rep.chosen, 1);
        assert!(rep.scores.unwrap()[0].is_infinite());
        let set = CandidateSet::new("a", vec![flat.clone(), flat], 5).unwrap();
        assert_eq!(select_model(&set, &blob(5, 16)), Err(SelectionError::AllDegenerate("a".into())));
    }

    #[test]
    fn candidate_set_limits() {
        assert!(CandidateSet::<f64>::new("a", vec![], 5).is_err());
        assert!(CandidateSet::new("a", vec![blob(1, 3); 6], 5).is_err());
        assert!(CandidateSet::new("a", vec![blob(1, 3), PointCloud::default()], 5).is_err());
    }

    #[test]
    fn choice_invariant_to_target_scale_and_candidate_translation() {
        let target = blob(6, 80);
        let set = CandidateSet::new("a", vec![blob(7, 80), blob(6, 79), blob(8, 80)], 5).unwrap();
        let base = select_model(&set, &target).unwrap().chosen;
        let scaled = apply_transform(&target, &LayoutParams::new([0.0; 3], EulerRotation::identity(), 7.5).unwrap()).unwrap();
        assert_eq!(select_model(&set, &scaled).unwrap().chosen, base);
        let shift = LayoutParams::new([3.0, -2.0, 10.0], EulerRotation::identity(), 1.0).unwrap();
        let moved = CandidateSet::new(
            "a",
            set.candidates.iter().map(|(_, c)| apply_transform(c, &shift).unwrap()).collect(),
            5,
        )
        .unwrap();
        assert_eq!(select_model(&moved, &target).unwrap().chosen, base);
    }

    #[test]
    fn passthrough_is_seeded() {
        let set = CandidateSet::new("a", vec![blob(1, 3); 5], 5).unwrap();
        let a = selection_ablation_passthrough(&set, 42);
        assert_eq!(a, selection_ablation_passthrough(&set, 42));
        assert!(a.scores.is_none());
        let one = CandidateSet::new("a", vec![blob(1, 3)], 5).unwrap();
        assert_eq!(selection_ablation_passthrough(&one, 42).chosen, 0);
    }

    #[test]
    fn passthrough_is_uniform() {
        let set = CandidateSet::new("a", vec![blob(1, 3); 5], 5).unwrap();
        let mut counts = [0usize; 5];
        for seed in 0..10_000 {
            counts[selection_ablation_passthrough(&set, seed).chosen] += 1;
        }
        for c in counts {
            let frac = c as f64 / 10_000.0;
            assert!((frac - 0.2).abs() <= 0.02, "{counts:?}");
        }
    }
}
