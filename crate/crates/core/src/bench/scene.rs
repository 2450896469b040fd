use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::shapes::{sample_surface, PrimitiveSpec, Shape};
use super::{derive_seed, BenchError};
use crate::camera::{DepthMap, PinholeIntrinsics};
use crate::geometry::transform::mat_t_vec;
use crate::geometry::{apply_transform, Aabb, EulerRotation, LayoutParams, PointCloud};
use crate::ingest::InstanceMask;

/// Rendered scene with per-primitive ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub cam: PinholeIntrinsics<f64>,
    pub primitives: Vec<PrimitiveSpec>,
    pub depth: DepthMap<f64>,
    /// Visible pixels won by each primitive.
    pub masks: Vec<InstanceMask>,
    /// Surface samples in each primitive's canonical frame (before pose).
    pub canonical_clouds: Vec<PointCloud<f64>>,
    /// `1 - visible / alone`; 1.0 when the primitive covers no pixel at all.
    pub occlusion_fraction: Vec<f64>,
    /// Seed each canonical cloud was sampled with.
    pub sample_seeds: Vec<u64>,
}

impl SyntheticScene {
    /// Diagonal of the bounding box of all posed canonical clouds.
    pub fn scene_diagonal(&self) -> f64 {
        let mut bounds: Option<Aabb<f64>> = None;
        for (spec, cloud) in self.primitives.iter().zip(&self.canonical_clouds) {
            let posed = apply_transform(cloud, &spec.pose).expect("validated pose");
            let b = posed.aabb().expect("non-empty sample");
            bounds = Some(match bounds {
                Some(acc) => acc.union(&b),
                None => b,
            });
        }
        bounds.map_or(0.0, |b| b.diagonal())
    }

    pub fn visible_pixels(&self, i: usize) -> usize {
        self.masks[i].count()
    }
}

/// Casts one ray through every integer pixel position and keeps the
/// nearest hit. Canonical clouds are sampled with seeds derived from
/// `sample_seed`.
pub fn raycast_scene(
    primitives: &[PrimitiveSpec],
    cam: &PinholeIntrinsics<f64>,
    sample_seed: u64,
) -> Result<SyntheticScene, BenchError> {
    cam.validate().map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
    for p in primitives {
        p.validate()?;
    }
    let (w, h) = cam.dims();
    // Rays in each canonical frame: o' = R^T(-t)/s, d' = R^T d / s.
    let frames: Vec<_> = primitives
        .iter()
        .map(|p| {
            let rot = p.pose.rotation.matrix();
            let origin = p.pose.inverse_point(&rot, &[0.0; 3]);
            (rot, origin)
        })
        .collect();
    let mut depth = vec![0.0; w * h];
    let mut owner: Vec<Option<usize>> = vec![None; w * h];
    let mut alone = vec![0usize; primitives.len()];
    for v in 0..h {
        for u in 0..w {
            let ray = cam.pixel_ray(u as f64, v as f64);
            let i = v * w + u;
            for (k, (p, (rot, origin))) in primitives.iter().zip(&frames).enumerate() {
                let local_dir = mat_t_vec(rot, &ray).map(|c| c / p.pose.scale);
                if let Some(z) = p.shape.intersect(p.canonical_size, origin, &local_dir) {
                    alone[k] += 1;
                    if owner[i].is_none() || z < depth[i] {
                        owner[i] = Some(k);
                        depth[i] = z;
                    }
                }
            }
        }
    }
    let masks: Vec<_> = (0..primitives.len())
        .map(|k| InstanceMask::new(w, h, owner.iter().map(|o| *o == Some(k)).collect()))
        .collect();
    let occlusion_fraction = masks
        .iter()
        .zip(&alone)
        .map(|(m, &a)| if a == 0 { 1.0 } else { 1.0 - m.count() as f64 / a as f64 })
        .collect();
    let sample_seeds: Vec<u64> = (0..primitives.len()).map(|k| derive_seed(sample_seed, k as u64)).collect();
    let canonical_clouds = primitives
        .iter()
        .zip(&sample_seeds)
        .map(|(p, &seed)| sample_surface(p, p.point_budget, seed))
        .collect();
    Ok(SyntheticScene {
        cam: *cam,
        primitives: primitives.to_vec(),
        depth: DepthMap::from_raw(w, h, depth).map_err(|e| BenchError::InvalidConfig(e.to_string()))?,
        masks,
        canonical_clouds,
        occlusion_fraction,
        sample_seeds,
    })
}

/// How the on-disk job exposes scene geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryOutput {
    /// Depth PFM plus explicit intrinsics.
    Depth,
    /// Three-channel pointmap PFM without intrinsics (focal is estimated).
    Pointmap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere,
    Box,
    LBracket,
}

/// Scene generator settings. Ranges are inclusive `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub camera: CameraConfig,
    pub shapes: Vec<ShapeKind>,
    pub min_primitives: usize,
    pub max_primitives: usize,
    /// Canonical size (largest dimension) in scene units.
    pub size_range: [f64; 2],
    pub scale_range: [f64; 2],
    /// Depth of primitive centers.
    pub depth_range: [f64; 2],
    /// Each Euler angle is drawn from `[-max_rotation, max_rotation]`.
    pub max_rotation: f64,
    pub point_budget: usize,
    pub candidates: usize,
    pub max_occlusion: f64,
    pub min_visible_pixels: usize,
    /// Standard deviation of additive Gaussian noise on valid depth values.
    pub depth_noise: f64,
    pub geometry: GeometryOutput,
    pub max_attempts: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            camera: CameraConfig { focal: 200.0, width: 160, height: 120 },
            shapes: vec![ShapeKind::Sphere, ShapeKind::Box, ShapeKind::LBracket],
            min_primitives: 3,
            max_primitives: 8,
            size_range: [0.22, 0.32],
            scale_range: [0.8, 1.25],
            depth_range: [2.6, 3.4],
            max_rotation: std::f64::consts::PI,
            point_budget: 192,
            candidates: 5,
            max_occlusion: 0.5,
            min_visible_pixels: 60,
            depth_noise: 0.0,
            geometry: GeometryOutput::Depth,
            max_attempts: 500,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |field: &str, msg: &str| Err(BenchError::InvalidConfig(format!("{field}: {msg}")));
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] > 0.0 && r[0] <= r[1];
        if !(self.camera.focal > 0.0 && self.camera.focal.is_finite()) {
            return bad("camera.focal", "must be positive");
        }
        if self.camera.width == 0 || self.camera.height == 0 {
            return bad("camera", "image size must be positive");
        }
        if self.shapes.is_empty() {
            return bad("shapes", "must not be empty");
        }
        if self.min_primitives == 0 || self.min_primitives > self.max_primitives {
            return bad("min_primitives", "need 1 <= min_primitives <= max_primitives");
        }
        for (field, r) in [("size_range", self.size_range), ("scale_range", self.scale_range), ("depth_range", self.depth_range)] {
            if !range_ok(r) {
                return bad(field, "need 0 < lo <= hi");
            }
        }
        if !(self.max_rotation >= 0.0 && self.max_rotation.is_finite()) {
            return bad("max_rotation", "must be non-negative");
        }
        if self.point_budget == 0 {
            return bad("point_budget", "must be positive");
        }
        if self.candidates == 0 {
            return bad("candidates", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.max_occlusion) {
            return bad("max_occlusion", "must lie in [0, 1]");
        }
        if !(self.depth_noise >= 0.0 && self.depth_noise.is_finite()) {
            return bad("depth_noise", "must be non-negative");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts", "must be positive");
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<PinholeIntrinsics<f64>, BenchError> {
        PinholeIntrinsics::centered(self.camera.focal, self.camera.width, self.camera.height)
            .map_err(|e| BenchError::InvalidConfig(e.to_string()))
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

pub(crate) fn random_shape(kind: ShapeKind, rng: &mut ChaCha8Rng) -> Shape {
    match kind {
        ShapeKind::Sphere => Shape::Sphere,
        ShapeKind::Box => Shape::Box { extents: [1.0, rng.random_range(0.55..0.8), rng.random_range(0.25..0.45)] },
        ShapeKind::LBracket => Shape::LBracket {
            long_leg: 1.0,
            short_leg: rng.random_range(0.55..0.75),
            thickness: rng.random_range(0.2..0.3),
            depth: rng.random_range(0.35..0.5),
        },
    }
}

fn random_primitive(config: &BenchConfig, cam: &PinholeIntrinsics<f64>, rng: &mut ChaCha8Rng) -> Option<PrimitiveSpec> {
    let kind = config.shapes[rng.random_range(0..config.shapes.len())];
    let shape = random_shape(kind, rng);
    let size = uniform(rng, config.size_range);
    let scale = uniform(rng, config.scale_range);
    let m = config.max_rotation;
    let mut angle = || if m > 0.0 { rng.random_range(-m..m) } else { 0.0 };
    let rotation = EulerRotation::new(angle(), angle(), angle());
    let z = uniform(rng, config.depth_range);
    let radius = scale * shape.bounding_radius(size);
    // Keep the projected bounding circle inside the image.
    let r_px = cam.focal * radius / (z - radius) + 2.0;
    let (w, h) = (cam.width as f64, cam.height as f64);
    if 2.0 * r_px >= w.min(h) || z - radius <= super::shapes::MIN_OBJECT_DEPTH {
        return None;
    }
    let u = rng.random_range(r_px..w - 1.0 - r_px);
    let v = rng.random_range(r_px..h - 1.0 - r_px);
    let translation = [(u - cam.cx) * z / cam.focal, (v - cam.cy) * z / cam.focal, z];
    let pose = LayoutParams::new(translation, rotation, scale).ok()?;
    Some(PrimitiveSpec::new(shape, size, pose, config.point_budget))
}

/// Draws a scene that satisfies the occlusion and visibility limits,
/// retrying with fresh draws from the same generator.
pub fn generate_scene(config: &BenchConfig, seed: u64) -> Result<SyntheticScene, BenchError> {
    config.validate()?;
    let cam = config.intrinsics()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..config.max_attempts {
        let n = rng.random_range(config.min_primitives..=config.max_primitives);
        let mut prims: Vec<PrimitiveSpec> = Vec::with_capacity(n);
        let mut tries = 0;
        while prims.len() < n && tries < 50 * n {
            tries += 1;
            let Some(p) = random_primitive(config, &cam, &mut rng) else { continue };
            let r = p.pose.scale * p.shape.bounding_radius(p.canonical_size);
            let disjoint = prims.iter().all(|q| {
                let rq = q.pose.scale * q.shape.bounding_radius(q.canonical_size);
                let d: f64 = (0..3).map(|k| (p.pose.translation[k] - q.pose.translation[k]).powi(2)).sum::<f64>().sqrt();
                d > r + rq
            });
            if disjoint {
                prims.push(p);
            }
        }
        if prims.len() < n {
            continue;
        }
        let sample_seed = rng.random::<u64>();
        let mut scene = raycast_scene(&prims, &cam, sample_seed)?;
        let acceptable = (0..n).all(|k| {
            scene.occlusion_fraction[k] <= config.max_occlusion && scene.visible_pixels(k) >= config.min_visible_pixels
        });
        if !acceptable {
            continue;
        }
        if config.depth_noise > 0.0 {
            let noise = Normal::new(0.0, config.depth_noise).map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
            for (d, ok) in scene.depth.values.iter_mut().zip(&scene.depth.valid) {
                if *ok {
                    *d = (*d + noise.sample(&mut rng)).max(1e-6);
                }
            }
        }
        return Ok(scene);
    }
    Err(BenchError::GenerationFailed { attempts: config.max_attempts })
}
