//! Per-instance layout optimization: Adam on the combined 3D + projected 2D
//! Chamfer loss with a two-phase schedule and multiple random restarts.
//!
//! Each epoch is an independent restart with fresh Adam state. Epoch 0
//! starts from zero rotation, later epochs from seeded uniform Euler angles
//! in `[-pi, pi)`. The first `phase1_iters` iterations of an epoch optimize
//! the 3D term only; the remaining iterations add the 2D term. The epoch
//! whose final loss is lowest wins.

mod adam;
mod loss;

pub use adam::{adam_step, AdamState, MIN_SCALE};
pub use loss::{
    loss_gradient, loss_total, LossBreakdown, LossEvaluation, LossProblem, LossWeights, Phase, MIN_PROJECTION_DEPTH,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::PinholeIntrinsics;
use crate::geometry::{EulerRotation, GeometryError, LayoutParams, PointCloud};
use crate::scalar::Real;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("empty cloud")]
    EmptyCloud,
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient component {component} at Adam step {step}")]
    NonFiniteGradient { component: usize, step: u64 },
    #[error("all model points are behind the camera")]
    AllBehindCamera,
    #[error("target has points behind the camera; the 2D term is undefined")]
    TargetBehindCamera,
    #[error("every epoch failed; last error: {0}")]
    AllEpochsFailed(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Which loss terms drive the updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// 3D term throughout, 2D term added after the first phase.
    #[default]
    Full,
    /// 3D term only (2D is still measured for the trace).
    Only3d,
    /// 2D term only, in every iteration.
    Only2d,
}

impl std::str::FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::Full),
            "only3d" => Ok(Self::Only3d),
            "only2d" => Ok(Self::Only2d),
            other => Err(format!("unknown mode '{other}' (expected full, only3d or only2d)")),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::Only3d => "only3d",
            Self::Only2d => "only2d",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig<T> {
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub phase1_iters: usize,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub seed: u64,
    pub mode: LossMode,
    /// Stride-subsample both clouds to at most this many points.
    pub max_points: Option<usize>,
}

impl<T: Real> Default for OptimizerConfig<T> {
    fn default() -> Self {
        Self {
            epochs: 20,
            iters_per_epoch: 2000,
            phase1_iters: 1200,
            lr: T::lit(0.01),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            seed: 0,
            mode: LossMode::Full,
            max_points: None,
        }
    }
}

impl<T: Real> OptimizerConfig<T> {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |m: &str| Err(OptimizeError::InvalidConfig(m.to_string()));
        if self.epochs == 0 || self.iters_per_epoch == 0 || self.phase1_iters == 0 {
            return bad("epochs, iters_per_epoch and phase1_iters must be positive");
        }
        if self.phase1_iters > self.iters_per_epoch {
            return bad("phase1_iters must not exceed iters_per_epoch");
        }
        if !(self.lr > T::zero() && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        let unit = |b: T| b >= T::zero() && b < T::one();
        if !unit(self.beta1) || !unit(self.beta2) || !(self.eps > T::zero()) {
            return bad("Adam betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }

    /// Weights on (3D, 2D) for iteration `iter` of an epoch.
    fn iteration_weights(&self, w: &LossWeights<T>, iter: usize) -> (T, T) {
        match self.mode {
            LossMode::Full if iter < self.phase1_iters => (w.lambda1, T::zero()),
            LossMode::Full => (w.lambda1, w.lambda2),
            LossMode::Only3d => (w.lambda1, T::zero()),
            LossMode::Only2d => (T::zero(), w.lambda2),
        }
    }

    /// Weights used to rank epochs.
    fn ranking_weights(&self, w: &LossWeights<T>) -> (T, T) {
        match self.mode {
            LossMode::Full => (w.lambda1, w.lambda2),
            LossMode::Only3d => (w.lambda1, T::zero()),
            LossMode::Only2d => (T::zero(), w.lambda2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord<T> {
    pub loss3d: T,
    pub loss2d: T,
    pub total: T,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord<T> {
    pub initial: LayoutParams<T>,
    /// Parameters at the end of the epoch.
    pub params: LayoutParams<T>,
    /// Final loss under the ranking weights; `None` when the epoch failed.
    pub loss: Option<T>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationTrace<T> {
    pub iters_per_epoch: usize,
    /// Epoch-major per-iteration losses, measured before each update. A
    /// failed epoch contributes only the iterations it completed.
    pub iterations: Vec<(usize, IterationRecord<T>)>,
    pub epochs: Vec<EpochRecord<T>>,
    pub chosen_epoch: usize,
}

impl<T: Real> OptimizationTrace<T> {
    pub fn chosen(&self) -> &EpochRecord<T> {
        &self.epochs[self.chosen_epoch]
    }
}

/// Initial layout for a restart: scale from the ratio of AABB max extents,
/// translation aligning the centroids under the given rotation.
pub fn initial_params<T: Real>(
    model: &PointCloud<T>,
    target: &PointCloud<T>,
    rotation: EulerRotation<T>,
) -> Result<LayoutParams<T>, OptimizeError> {
    let model_extent = model.aabb()?.max_extent();
    let target_extent = target.aabb()?.max_extent();
    let scale = if model_extent > T::zero() && target_extent > T::zero() {
        target_extent / model_extent
    } else {
        T::one()
    };
    let cm = model.centroid()?;
    let ct = target.centroid()?;
    let rot = rotation.matrix();
    let placed = LayoutParams { translation: [T::zero(); 3], rotation, scale }.transform_point(&rot, &cm);
    let translation = [0, 1, 2].map(|k| ct[k] - placed[k]);
    Ok(LayoutParams::new(translation, rotation, scale)?)
}

fn restart_rotations<T: Real>(epochs: usize, seed: u64) -> Vec<EulerRotation<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = std::f64::consts::PI;
    (0..epochs)
        .map(|e| {
            let mut angle = || T::lit(rng.random_range(-pi..pi));
            let r = EulerRotation::new(angle(), angle(), angle());
            if e == 0 {
                EulerRotation::identity()
            } else {
                r
            }
        })
        .collect()
}

/// Fits `model` onto `target`; returns the parameters of the lowest-loss
/// epoch together with the full trace. Deterministic for a given seed.
pub fn optimize_layout<T: Real>(
    model: &PointCloud<T>,
    target: &PointCloud<T>,
    cam: &PinholeIntrinsics<T>,
    weights: &LossWeights<T>,
    config: &OptimizerConfig<T>,
) -> Result<(LayoutParams<T>, OptimizationTrace<T>), OptimizeError> {
    config.validate()?;
    weights.validate()?;
    if model.is_empty() || target.is_empty() {
        return Err(OptimizeError::EmptyCloud);
    }
    let (model, target) = match config.max_points {
        Some(max) => (model.subsample_stride(max), target.subsample_stride(max)),
        None => (model.clone(), target.clone()),
    };
    let mut problem = LossProblem::new(&model, &target, cam)?;
    let rotations = restart_rotations::<T>(config.epochs, config.seed);
    let (rank_w3, rank_w2) = config.ranking_weights(weights);

    let mut iterations = Vec::with_capacity(config.epochs * config.iters_per_epoch);
    let mut epochs = Vec::with_capacity(config.epochs);
    for (epoch, rotation) in rotations.into_iter().enumerate() {
        let initial = initial_params(&model, &target, rotation)?;
        let run = (|| -> Result<(LayoutParams<T>, T), OptimizeError> {
            let mut params = initial;
            let mut adam = AdamState::default();
            for iter in 0..config.iters_per_epoch {
                let (w3, w2) = config.iteration_weights(weights, iter);
                let eval = problem.evaluate(&params, w3, w2)?;
                iterations.push((
                    epoch,
                    IterationRecord {
                        loss3d: eval.loss.loss3d,
                        loss2d: eval.loss.loss2d,
                        total: eval.loss.total,
                        excluded: eval.loss.excluded,
                    },
                ));
                params = adam_step(&mut adam, &params, &eval.gradient, config)?;
            }
            let end = problem.evaluate(&params, rank_w3, rank_w2)?;
            Ok((params, end.loss.total))
        })();
        match run {
            Ok((params, loss)) if loss.is_finite() => {
                epochs.push(EpochRecord { initial, params, loss: Some(loss), failure: None })
            }
            Ok((params, _)) => epochs.push(EpochRecord {
                initial,
                params,
                loss: None,
                failure: Some("non-finite final loss".into()),
            }),
            Err(e) => {
                log::debug!("epoch {epoch} failed: {e}");
                epochs.push(EpochRecord { initial, params: initial, loss: None, failure: Some(e.to_string()) })
            }
        }
    }

    let mut chosen: Option<usize> = None;
    for (i, e) in epochs.iter().enumerate() {
        if let Some(l) = e.loss {
            if chosen.is_none_or(|c| l < epochs[c].loss.unwrap()) {
                chosen = Some(i);
            }
        }
    }
    let Some(chosen_epoch) = chosen else {
        let last = epochs.last().and_then(|e| e.failure.clone()).unwrap_or_default();
        return Err(OptimizeError::AllEpochsFailed(last));
    };
    let params = epochs[chosen_epoch].params;
    Ok((params, OptimizationTrace { iters_per_epoch: config.iters_per_epoch, iterations, epochs, chosen_epoch }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::apply_transform;

    fn cam() -> PinholeIntrinsics<f64> {
        PinholeIntrinsics::centered(200.0, 160, 120).unwrap()
    }

    fn grid_cloud() -> PointCloud<f64> {
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..4 {
                pts.push([i as f64 * 0.05 - 0.12, j as f64 * 0.04 - 0.06, (i * j) as f64 * 0.004]);
            }
        }
        PointCloud::new(pts).unwrap()
    }

    fn small_config() -> OptimizerConfig<f64> {
        OptimizerConfig { epochs: 3, iters_per_epoch: 60, phase1_iters: 40, ..Default::default() }
    }

    #[test]
    fn config_validation() {
        let mut c = small_config();
        assert!(c.validate().is_ok());
        c.phase1_iters = 61;
        assert!(c.validate().is_err());
        c.phase1_iters = 0;
        assert!(c.validate().is_err());
        let c = OptimizerConfig { lr: 0.0, ..small_config() };
        assert!(c.validate().is_err());
        assert_eq!("only2d".parse::<LossMode>().unwrap(), LossMode::Only2d);
        assert!("both".parse::<LossMode>().is_err());
    }

    #[test]
    fn init_aligns_centroids_and_extents() {
        let model = grid_cloud();
        let truth = LayoutParams::new([0.1, 0.0, 2.0], EulerRotation::identity(), 1.5).unwrap();
        let target = apply_transform(&model, &truth).unwrap();
        let p = initial_params(&model, &target, EulerRotation::identity()).unwrap();
        assert!((p.scale - 1.5).abs() < 1e-12);
        for k in 0..3 {
            assert!((p.translation[k] - truth.translation[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn converged_start_stays_close() {
        let model = grid_cloud();
        let truth = LayoutParams::new([0.0, 0.0, 2.0], EulerRotation::identity(), 1.0).unwrap();
        let target = apply_transform(&model, &truth).unwrap();
        let (p, trace) = optimize_layout(&model, &target, &cam(), &LossWeights::default(), &small_config()).unwrap();
        assert_eq!(trace.chosen_epoch, 0);
        // Adam takes lr-sized steps even on round-off gradients, so the
        // start is left and re-approached rather than held exactly.
        assert!((p.translation[2] - 2.0).abs() < 5e-3);
        assert!((p.scale - 1.0).abs() < 1e-2);
        assert_eq!(trace.iterations.len(), 3 * 60);
    }

    #[test]
    fn deterministic_and_min_loss_epoch() {
        let model = grid_cloud();
        let truth = LayoutParams::new([0.05, -0.02, 2.2], EulerRotation::new(0.1, 0.2, 0.3), 1.2).unwrap();
        let target = apply_transform(&model, &truth).unwrap();
        let cfg = OptimizerConfig { seed: 9, ..small_config() };
        let a = optimize_layout(&model, &target, &cam(), &LossWeights::default(), &cfg).unwrap();
        let b = optimize_layout(&model, &target, &cam(), &LossWeights::default(), &cfg).unwrap();
        assert_eq!(a, b);
        let best = a.1.chosen().loss.unwrap();
        assert!(a.1.epochs.iter().all(|e| e.loss.is_none_or(|l| best <= l)));
        // restarts other than the first start from random rotations
        assert_eq!(a.1.epochs[0].initial.rotation, EulerRotation::identity());
        assert_ne!(a.1.epochs[1].initial.rotation, EulerRotation::identity());
    }

    #[test]
    fn only3d_ignores_lambda2() {
        let model = grid_cloud();
        let truth = LayoutParams::new([0.05, -0.02, 2.2], EulerRotation::new(0.1, 0.2, 0.3), 1.2).unwrap();
        let target = apply_transform(&model, &truth).unwrap();
        let cfg = OptimizerConfig { mode: LossMode::Only3d, ..small_config() };
        let a = optimize_layout(&model, &target, &cam(), &LossWeights::new(1.0, 0.05).unwrap(), &cfg).unwrap();
        let b = optimize_layout(&model, &target, &cam(), &LossWeights::new(1.0, 3.0).unwrap(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn failed_epochs_are_skipped() {
        // Target behind the camera: every epoch errors once the 2D term is on.
        let model = grid_cloud();
        let target = apply_transform(&model, &LayoutParams::new([0.0, 0.0, -2.0], EulerRotation::identity(), 1.0).unwrap()).unwrap();
        let err = optimize_layout(&model, &target, &cam(), &LossWeights::default(), &small_config()).unwrap_err();
        assert!(matches!(err, OptimizeError::AllEpochsFailed(_)));
        let cfg = OptimizerConfig { mode: LossMode::Only3d, ..small_config() };
        assert!(optimize_layout(&model, &target, &cam(), &LossWeights::default(), &cfg).is_ok());
    }
}
