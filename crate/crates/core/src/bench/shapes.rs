use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::geometry::transform::{geodesic_between, mat_mul, Mat3};
use crate::geometry::{apply_transform, EulerRotation, LayoutParams, Point3, PointCloud};

/// Analytic primitive families. Proportions are relative to the
/// primitive's canonical size (its largest dimension).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Diameter equals the canonical size.
    Sphere,
    /// Box with side lengths `extents * size`.
    Box { extents: [f64; 3] },
    /// Two boxes joined at a corner: a foot of length `long_leg` along x and
    /// an upright of height `short_leg` along y, both `thickness` thick and
    /// `depth` deep along z.
    LBracket { long_leg: f64, short_leg: f64, thickness: f64, depth: f64 },
}

impl Shape {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Sphere => "sphere",
            Self::Box { .. } => "box",
            Self::LBracket { .. } => "l_bracket",
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let pos = |v: f64| v > 0.0 && v <= 1.0 && v.is_finite();
        match *self {
            Self::Sphere => Ok(()),
            Self::Box { extents } if extents.iter().all(|&e| pos(e)) => Ok(()),
            Self::LBracket { long_leg, short_leg, thickness, depth }
                if [long_leg, short_leg, thickness, depth].iter().all(|&v| pos(v))
                    && thickness < long_leg
                    && thickness < short_leg =>
            {
                Ok(())
            }
            _ => Err(BenchError::InvalidPrimitive(format!("invalid shape parameters {self:?}"))),
        }
    }

    /// Component boxes `(min, max)` in the canonical frame, scaled by `size`.
    /// The canonical frame is centred on the shape's bounding box.
    fn boxes(&self, size: f64) -> Vec<(Point3<f64>, Point3<f64>)> {
        match *self {
            Self::Sphere => Vec::new(),
            Self::Box { extents } => {
                let h = extents.map(|e| e * size / 2.0);
                vec![(h.map(|v| -v), h)]
            }
            Self::LBracket { long_leg, short_leg, thickness, depth } => {
                let (a, b, t, w) = (long_leg * size, short_leg * size, thickness * size, depth * size);
                let c = [a / 2.0, b / 2.0, w / 2.0];
                let shift = |p: [f64; 3]| [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
                vec![
                    (shift([0.0, 0.0, 0.0]), shift([a, t, w])),
                    (shift([0.0, t, 0.0]), shift([t, b, w])),
                ]
            }
        }
    }

    /// Radius of a sphere about the canonical origin enclosing the shape.
    pub fn bounding_radius(&self, size: f64) -> f64 {
        match self {
            Self::Sphere => size / 2.0,
            _ => self
                .boxes(size)
                .iter()
                .flat_map(|(lo, hi)| [lo, hi])
                .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
                .fold(0.0, f64::max),
        }
    }

    /// Smallest positive ray parameter at which `origin + lambda * dir` hits
    /// the surface (canonical frame).
    pub fn intersect(&self, size: f64, origin: &Point3<f64>, dir: &Point3<f64>) -> Option<f64> {
        match self {
            Self::Sphere => {
                let r = size / 2.0;
                let a = dot(dir, dir);
                let b = dot(origin, dir);
                let c = dot(origin, origin) - r * r;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let near = (-b - sq) / a;
                let far = (-b + sq) / a;
                if near > 0.0 {
                    Some(near)
                } else if far > 0.0 {
                    Some(far)
                } else {
                    None
                }
            }
            _ => self
                .boxes(size)
                .iter()
                .filter_map(|(lo, hi)| intersect_box(lo, hi, origin, dir))
                .min_by(|a, b| a.total_cmp(b)),
        }
    }

    /// Unsigned distance from `p` to the surface (canonical frame).
    pub fn surface_distance(&self, size: f64, p: &Point3<f64>) -> f64 {
        match self {
            Self::Sphere => (dot(p, p).sqrt() - size / 2.0).abs(),
            _ => self
                .boxes(size)
                .iter()
                .map(|(lo, hi)| box_sdf(lo, hi, p))
                .fold(f64::INFINITY, f64::min)
                .abs(),
        }
    }

    pub fn surface_area(&self, size: f64) -> f64 {
        match self {
            Self::Sphere => std::f64::consts::PI * size * size,
            _ => {
                let faces = self.faces(size);
                let total: f64 = faces.iter().map(|f| f.area).sum();
                match self {
                    // the shared patch appears once on each box
                    Self::LBracket { thickness, depth, .. } => total - 2.0 * thickness * depth * size * size,
                    _ => total,
                }
            }
        }
    }

    fn faces(&self, size: f64) -> Vec<Face> {
        let mut out = Vec::new();
        for (b, (lo, hi)) in self.boxes(size).into_iter().enumerate() {
            for axis in 0..3 {
                let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                let area = (hi[u] - lo[u]) * (hi[v] - lo[v]);
                for side in [lo[axis], hi[axis]] {
                    out.push(Face { owner: b, axis, value: side, lo, hi, area });
                }
            }
        }
        out
    }

    /// Rotations `S` with `shape(S p) == shape(p)`; `None` for the sphere's
    /// continuous symmetry.
    pub fn rotational_symmetries(&self) -> Option<Vec<Mat3<f64>>> {
        let pi = std::f64::consts::PI;
        match self {
            Self::Sphere => None,
            Self::Box { .. } => Some(vec![
                EulerRotation::identity().matrix(),
                EulerRotation::new(pi, 0.0, 0.0).matrix(),
                EulerRotation::new(0.0, pi, 0.0).matrix(),
                EulerRotation::new(0.0, 0.0, pi).matrix(),
            ]),
            Self::LBracket { .. } => Some(vec![EulerRotation::identity().matrix()]),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Face {
    owner: usize,
    axis: usize,
    value: f64,
    lo: Point3<f64>,
    hi: Point3<f64>,
    area: f64,
}

fn dot(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn intersect_box(lo: &Point3<f64>, hi: &Point3<f64>, o: &Point3<f64>, d: &Point3<f64>) -> Option<f64> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    for k in 0..3 {
        if d[k] == 0.0 {
            if o[k] < lo[k] || o[k] > hi[k] {
                return None;
            }
            continue;
        }
        let t1 = (lo[k] - o[k]) / d[k];
        let t2 = (hi[k] - o[k]) / d[k];
        t_enter = t_enter.max(t1.min(t2));
        t_exit = t_exit.min(t1.max(t2));
    }
    if t_exit < t_enter || t_exit <= 0.0 {
        return None;
    }
    Some(if t_enter > 0.0 { t_enter } else { t_exit })
}

fn box_sdf(lo: &Point3<f64>, hi: &Point3<f64>, p: &Point3<f64>) -> f64 {
    let mut outside = 0.0;
    let mut inside = f64::NEG_INFINITY;
    for k in 0..3 {
        let c = (lo[k] + hi[k]) / 2.0;
        let h = (hi[k] - lo[k]) / 2.0;
        let q = (p[k] - c).abs() - h;
        outside += q.max(0.0).powi(2);
        inside = inside.max(q);
    }
    outside.sqrt() + inside.min(0.0)
}

fn inside_closed(lo: &Point3<f64>, hi: &Point3<f64>, p: &Point3<f64>) -> bool {
    (0..3).all(|k| p[k] >= lo[k] && p[k] <= hi[k])
}

/// One object in a synthetic scene: shape, size and ground-truth layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveSpec {
    pub shape: Shape,
    pub canonical_size: f64,
    pub pose: LayoutParams<f64>,
    pub label: String,
    pub point_budget: usize,
}

/// Objects must stay at least this far in front of the camera plane.
pub const MIN_OBJECT_DEPTH: f64 = 0.05;

impl PrimitiveSpec {
    pub fn new(shape: Shape, canonical_size: f64, pose: LayoutParams<f64>, point_budget: usize) -> Self {
        Self { shape, canonical_size, pose, label: shape.label().to_string(), point_budget }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        self.shape.validate()?;
        if !(self.canonical_size > 0.0 && self.canonical_size.is_finite()) {
            return Err(BenchError::InvalidPrimitive(format!("canonical size {}", self.canonical_size)));
        }
        self.pose
            .validate()
            .map_err(|e| BenchError::InvalidPrimitive(e.to_string()))?;
        let nearest = self.pose.translation[2] - self.pose.scale * self.shape.bounding_radius(self.canonical_size);
        if nearest <= MIN_OBJECT_DEPTH {
            return Err(BenchError::BehindCamera { label: self.label.clone(), nearest_z: nearest });
        }
        Ok(())
    }

    /// Distance from a scene-frame point to the posed surface.
    pub fn posed_surface_distance(&self, p: &Point3<f64>) -> f64 {
        let rot = self.pose.rotation.matrix();
        let local = self.pose.inverse_point(&rot, p);
        self.pose.scale * self.shape.surface_distance(self.canonical_size, &local)
    }

    /// Geodesic rotation error modulo the shape's rotational symmetries;
    /// `None` for continuously symmetric shapes.
    pub fn rotation_error(&self, estimate: &EulerRotation<f64>) -> Option<f64> {
        let syms = self.shape.rotational_symmetries()?;
        let truth = self.pose.rotation.matrix();
        let est = estimate.matrix();
        syms.iter()
            .map(|s| geodesic_between(&mat_mul(&truth, s), &est))
            .min_by(|a, b| a.total_cmp(b))
    }
}

/// `n` points uniform by area on the canonical surface of `spec`.
pub fn sample_surface(spec: &PrimitiveSpec, n: usize, seed: u64) -> PointCloud<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = spec.canonical_size;
    let mut pts = Vec::with_capacity(n);
    match spec.shape {
        Shape::Sphere => {
            let r = size / 2.0;
            while pts.len() < n {
                let g: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
                let len = dot(&g, &g).sqrt();
                if len < 1e-12 {
                    continue;
                }
                pts.push(g.map(|c| c * r / len));
            }
        }
        _ => {
            let boxes = spec.shape.boxes(size);
            let faces = spec.shape.faces(size);
            let total: f64 = faces.iter().map(|f| f.area).sum();
            while pts.len() < n {
                let mut pick = rng.random::<f64>() * total;
                let face = faces
                    .iter()
                    .find(|f| {
                        pick -= f.area;
                        pick < 0.0
                    })
                    .unwrap_or(faces.last().unwrap());
                let (u, v) = ((face.axis + 1) % 3, (face.axis + 2) % 3);
                let mut p = [0.0; 3];
                p[face.axis] = face.value;
                p[u] = face.lo[u] + rng.random::<f64>() * (face.hi[u] - face.lo[u]);
                p[v] = face.lo[v] + rng.random::<f64>() * (face.hi[v] - face.lo[v]);
                // Patches of one box lying on another box are interior to the union.
                let interior = boxes
                    .iter()
                    .enumerate()
                    .any(|(b, (lo, hi))| b != face.owner && inside_closed(lo, hi, &p));
                if !interior {
                    pts.push(p);
                }
            }
        }
    }
    PointCloud::new(pts).expect("finite samples")
}

/// Surface sample placed by the primitive's ground-truth pose.
pub fn sample_posed_surface(spec: &PrimitiveSpec, n: usize, seed: u64) -> PointCloud<f64> {
    apply_transform(&sample_surface(spec, n, seed), &spec.pose).expect("validated pose")
}
