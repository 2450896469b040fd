use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scene::{random_shape, ShapeKind};
use super::shapes::{sample_surface, PrimitiveSpec, Shape};
use super::{derive_seed, BenchError};
use crate::selection::CandidateSet;

/// Multiplies by a factor in `[1.3, 1.5)`, or divides when growing would
/// leave the valid range.
fn perturb(value: f64, rng: &mut ChaCha8Rng) -> f64 {
    let f = 1.0 + rng.random_range(0.3..0.5);
    if value * f > 0.95 {
        value / f
    } else {
        value * f
    }
}

fn perturbed(shape: &Shape, variant: usize, rng: &mut ChaCha8Rng) -> Shape {
    match *shape {
        Shape::Sphere => unreachable!("spheres have no proportions"),
        Shape::Box { mut extents } => {
            // never the largest side, which stays 1
            let axes: Vec<usize> = (0..3).filter(|&k| extents[k] < 1.0).collect();
            let axis = axes[variant % axes.len().max(1)];
            extents[axis] = perturb(extents[axis], rng);
            Shape::Box { extents }
        }
        Shape::LBracket { long_leg, short_leg, thickness, depth } => {
            let p = [short_leg, thickness, depth];
            for attempt in 0..3 {
                let mut q = p;
                let k = (variant + attempt) % 3;
                q[k] = perturb(q[k], rng);
                let cand = Shape::LBracket { long_leg, short_leg: q[0], thickness: q[1], depth: q[2] };
                if cand.validate().is_ok() {
                    return cand;
                }
            }
            unreachable!("depth can always be perturbed")
        }
    }
}

/// Shapes for a `k`-way candidate set: entry 0 is the true shape, the rest
/// alternate between other families and same-family variants whose
/// proportions differ by at least 23%.
pub fn candidate_shapes(spec: &PrimitiveSpec, k: usize, seed: u64) -> Vec<Shape> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xdec0));
    let mut out = vec![spec.shape];
    for j in 1..k {
        let slot = (j - 1) % 4;
        let variant = (j - 1) / 2;
        let shape = match (spec.shape, slot) {
            (Shape::Sphere, 0 | 2) => random_shape(ShapeKind::Box, &mut rng),
            (Shape::Sphere, _) => random_shape(ShapeKind::LBracket, &mut rng),
            (Shape::Box { .. }, 0) => Shape::Sphere,
            (Shape::Box { .. }, 2) => random_shape(ShapeKind::LBracket, &mut rng),
            (Shape::LBracket { .. }, 0) => random_shape(ShapeKind::Box, &mut rng),
            (Shape::LBracket { .. }, 2) => Shape::Sphere,
            (s, _) => perturbed(&s, variant, &mut rng),
        };
        out.push(shape);
    }
    out
}

/// Surface samples of the candidate shapes, all in canonical frame.
/// Candidate 0 is sampled with `seed` itself, so it reproduces the cloud
/// `sample_surface(spec, spec.point_budget, seed)`.
pub fn make_candidates(spec: &PrimitiveSpec, k: usize, seed: u64) -> Result<CandidateSet<f64>, BenchError> {
    if k == 0 {
        return Err(BenchError::InvalidConfig("candidate count must be at least 1".into()));
    }
    let clouds = candidate_shapes(spec, k, seed)
        .into_iter()
        .enumerate()
        .map(|(j, shape)| {
            let s = PrimitiveSpec { shape, ..spec.clone() };
            let sample_seed = if j == 0 { seed } else { derive_seed(seed, j as u64) };
            sample_surface(&s, spec.point_budget, sample_seed)
        })
        .collect();
    CandidateSet::new(spec.label.clone(), clouds, k).map_err(|e| BenchError::InvalidConfig(e.to_string()))
}
