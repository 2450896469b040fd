//! Combined 3D / projected-2D Chamfer loss and its analytic gradient.
//!
//! The gradient holds nearest-neighbour correspondences fixed at the current
//! parameters (recomputed on every call), i.e. it is the exact gradient of
//! the fixed-correspondence surrogate.

use serde::{Deserialize, Serialize};

use super::OptimizeError;
use crate::camera::PinholeIntrinsics;
use crate::geometry::{sub, LayoutParams, NearestNeighborIndex, Point3, PointCloud};
use crate::scalar::Real;

/// Model points at or below this depth are left out of the 2D term.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights<T> {
    pub lambda1: T,
    pub lambda2: T,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        Self { lambda1: T::one(), lambda2: T::lit(5e-2) }
    }
}

impl<T: Real> LossWeights<T> {
    pub fn new(lambda1: T, lambda2: T) -> Result<Self, OptimizeError> {
        let w = Self { lambda1, lambda2 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        let ok = |v: T| v >= T::zero() && v.is_finite();
        if !ok(self.lambda1) || !ok(self.lambda2) || (self.lambda1 == T::zero() && self.lambda2 == T::zero()) {
            return Err(OptimizeError::InvalidConfig(format!(
                "loss weights must be non-negative and not both zero (got {}, {})",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

/// Schedule phase: the first phase optimizes the 3D term alone, the second
/// adds the projected 2D term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Spatial,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub loss3d: T,
    /// Unweighted 2D Chamfer distance in squared pixels; NaN when no model
    /// point lies in front of the camera.
    pub loss2d: T,
    /// Model points excluded from the 2D term for lying behind the camera.
    pub excluded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEvaluation<T> {
    pub loss: LossBreakdown<T>,
    /// Partials in `(tx, ty, tz, rx, ry, rz, s)` order.
    pub gradient: [T; 7],
}

/// Precomputed state for repeatedly evaluating one model/target pair.
///
/// Target-side indices are built once. Target-to-model queries run against
/// a fixed index over the canonical model by mapping each target point
/// through the inverse similarity, which preserves nearest neighbours.
pub struct LossProblem<T: Real> {
    model: Vec<Point3<T>>,
    target: Vec<Point3<T>>,
    cam: PinholeIntrinsics<T>,
    model_index: NearestNeighborIndex<T, 3>,
    target_index: NearestNeighborIndex<T, 3>,
    target_px: Option<(Vec<[T; 2]>, NearestNeighborIndex<T, 2>)>,
    placed: Vec<Point3<T>>,
    grad_p: Vec<Point3<T>>,
    px: Vec<[T; 2]>,
    px_owner: Vec<usize>,
    // Previous nearest neighbours, used only to speed up exact queries.
    hint_fwd3: Vec<usize>,
    hint_bwd3: Vec<usize>,
    hint_fwd2: Vec<usize>,
    hint_bwd2: Vec<usize>,
}

impl<T: Real> LossProblem<T> {
    pub fn new(model: &PointCloud<T>, target: &PointCloud<T>, cam: &PinholeIntrinsics<T>) -> Result<Self, OptimizeError> {
        if model.is_empty() || target.is_empty() {
            return Err(OptimizeError::EmptyCloud);
        }
        let model_index = NearestNeighborIndex::from_cloud(model)?;
        let target_index = NearestNeighborIndex::from_cloud(target)?;
        let target_px = if target.iter().all(|p| p[2] > T::zero()) {
            let px: Vec<[T; 2]> = target.iter().map(|p| cam.project_point(p)).collect();
            let index = NearestNeighborIndex::build(&px)?;
            Some((px, index))
        } else {
            None
        };
        let n = model.len();
        Ok(Self {
            model: model.points().to_vec(),
            target: target.points().to_vec(),
            cam: *cam,
            model_index,
            target_index,
            target_px,
            placed: vec![[T::zero(); 3]; n],
            grad_p: vec![[T::zero(); 3]; n],
            px: Vec::with_capacity(n),
            px_owner: Vec::with_capacity(n),
            hint_fwd3: vec![0; n],
            hint_bwd3: vec![0; target.len()],
            hint_fwd2: vec![0; n],
            hint_bwd2: vec![0; target.len()],
        })
    }

    /// Evaluates `w3 * loss3d + w2 * loss2d` and its gradient. The 2D term is
    /// always measured for reporting; it only enters the total and gradient
    /// when `w2 > 0`.
    pub fn evaluate(&mut self, params: &LayoutParams<T>, w3: T, w2: T) -> Result<LossEvaluation<T>, OptimizeError> {
        params.validate()?;
        let (rot, d_rot) = params.rotation.matrix_and_partials();
        let two = T::lit(2.0);
        let n = T::from_usize(self.model.len()).unwrap();
        let m = T::from_usize(self.target.len()).unwrap();

        for (dst, p) in self.placed.iter_mut().zip(&self.model) {
            *dst = params.transform_point(&rot, p);
        }
        for g in self.grad_p.iter_mut() {
            *g = [T::zero(); 3];
        }

        // 3D, model -> target
        let mut fwd = T::zero();
        let cf = w3 * two / n;
        for (i, p) in self.placed.iter().enumerate() {
            let (j, d) = self.target_index.nearest_with_hint(p, self.hint_fwd3[i]);
            self.hint_fwd3[i] = j;
            fwd += d;
            let e = sub(p, &self.target[j]);
            for k in 0..3 {
                self.grad_p[i][k] += cf * e[k];
            }
        }
        // 3D, target -> model
        let mut bwd = T::zero();
        let cb = w3 * two / m;
        for (q, hint) in self.target.iter().zip(self.hint_bwd3.iter_mut()) {
            let (i, _) = self.model_index.nearest_with_hint(&params.inverse_point(&rot, q), *hint);
            *hint = i;
            let e = sub(&self.placed[i], q);
            bwd += e[0] * e[0] + e[1] * e[1] + e[2] * e[2];
            for k in 0..3 {
                self.grad_p[i][k] += cb * e[k];
            }
        }
        let loss3d = fwd / n + bwd / m;

        let (loss2d, excluded) = self.projected_term(w2)?;

        // Chain rule from placed points to (t, r, s).
        let mut grad_t = [T::zero(); 3];
        let mut outer = [[T::zero(); 3]; 3];
        for (g, p) in self.grad_p.iter().zip(&self.model) {
            for a in 0..3 {
                grad_t[a] += g[a];
                for b in 0..3 {
                    outer[a][b] += g[a] * p[b];
                }
            }
        }
        let contract = |mat: &[[T; 3]; 3]| {
            let mut acc = T::zero();
            for a in 0..3 {
                for b in 0..3 {
                    acc += mat[a][b] * outer[a][b];
                }
            }
            acc
        };
        let s = params.scale;
        let gradient = [
            grad_t[0],
            grad_t[1],
            grad_t[2],
            s * contract(&d_rot[0]),
            s * contract(&d_rot[1]),
            s * contract(&d_rot[2]),
            contract(&rot),
        ];

        let mut total = w3 * loss3d;
        if w2 > T::zero() {
            total += w2 * loss2d;
        }
        Ok(LossEvaluation { loss: LossBreakdown { total, loss3d, loss2d, excluded }, gradient })
    }

    fn projected_term(&mut self, w2: T) -> Result<(T, usize), OptimizeError> {
        let active = w2 > T::zero();
        let Some((target_px, target_px_index)) = &self.target_px else {
            if active {
                return Err(OptimizeError::TargetBehindCamera);
            }
            return Ok((T::nan(), 0));
        };
        let min_z = T::lit(MIN_PROJECTION_DEPTH);
        self.px.clear();
        self.px_owner.clear();
        for (i, p) in self.placed.iter().enumerate() {
            if p[2] > min_z {
                self.px.push(self.cam.project_point(p));
                self.px_owner.push(i);
            }
        }
        let excluded = self.placed.len() - self.px.len();
        if self.px.is_empty() {
            if active {
                return Err(OptimizeError::AllBehindCamera);
            }
            return Ok((T::nan(), excluded));
        }

        let two = T::lit(2.0);
        let f = self.cam.focal;
        let nv = T::from_usize(self.px.len()).unwrap();
        let m = T::from_usize(target_px.len()).unwrap();
        let mut fwd = T::zero();
        let mut bwd = T::zero();
        let cf = w2 * two / nv;
        let cb = w2 * two / m;

        // Accumulates d(loss)/d(pixel) for model point `owner`, mapped through
        // the projection Jacobian.
        let push = |grad_p: &mut [Point3<T>], placed: &[Point3<T>], owner: usize, g: [T; 2]| {
            let p = placed[owner];
            let iz = T::one() / p[2];
            let a = f * iz;
            grad_p[owner][0] += g[0] * a;
            grad_p[owner][1] += g[1] * a;
            grad_p[owner][2] -= (g[0] * p[0] + g[1] * p[1]) * a * iz;
        };

        for (slot, uv) in self.px.iter().enumerate() {
            let (j, d) = target_px_index.nearest_with_hint(uv, self.hint_fwd2[slot]);
            self.hint_fwd2[slot] = j;
            fwd += d;
            if active {
                let e = sub(uv, &target_px[j]);
                push(&mut self.grad_p, &self.placed, self.px_owner[slot], [cf * e[0], cf * e[1]]);
            }
        }
        let model_px_index = NearestNeighborIndex::build(&self.px)?;
        for (q, hint) in target_px.iter().zip(self.hint_bwd2.iter_mut()) {
            let (slot, d) = model_px_index.nearest_with_hint(q, *hint);
            *hint = slot;
            bwd += d;
            if active {
                let e = sub(&self.px[slot], q);
                push(&mut self.grad_p, &self.placed, self.px_owner[slot], [cb * e[0], cb * e[1]]);
            }
        }
        Ok((fwd / nv + bwd / m, excluded))
    }
}

fn phase_weights<T: Real>(w: &LossWeights<T>, phase: Phase) -> (T, T) {
    match phase {
        Phase::Spatial => (w.lambda1, T::zero()),
        Phase::Joint => (w.lambda1, w.lambda2),
    }
}

/// Loss terms for one parameter set: `loss3d` is the 3D Chamfer distance
/// between the placed model and the target, `loss2d` the Chamfer distance
/// of their projections, and `total = lambda1 * loss3d` in the spatial phase
/// or `lambda1 * loss3d + lambda2 * loss2d` in the joint phase.
pub fn loss_total<T: Real>(
    model: &PointCloud<T>,
    target: &PointCloud<T>,
    params: &LayoutParams<T>,
    cam: &PinholeIntrinsics<T>,
    weights: &LossWeights<T>,
    phase: Phase,
) -> Result<LossBreakdown<T>, OptimizeError> {
    let (w3, w2) = phase_weights(weights, phase);
    Ok(LossProblem::new(model, target, cam)?.evaluate(params, w3, w2)?.loss)
}

pub fn loss_gradient<T: Real>(
    model: &PointCloud<T>,
    target: &PointCloud<T>,
    params: &LayoutParams<T>,
    cam: &PinholeIntrinsics<T>,
    weights: &LossWeights<T>,
    phase: Phase,
) -> Result<[T; 7], OptimizeError> {
    let (w3, w2) = phase_weights(weights, phase);
    Ok(LossProblem::new(model, target, cam)?.evaluate(params, w3, w2)?.gradient)
}
