//! Point clouds, bounding boxes, similarity transforms and the distance
//! metrics built on top of them.

mod chamfer;
mod kdtree;
mod normalize;
pub(crate) mod transform;

pub use chamfer::{chamfer_distance, chamfer_distance_points, directed_mean_sq, f_score, f_score_points};
pub use kdtree::NearestNeighborIndex;
pub use normalize::{normalize_cloud, NormalizationRecord};
pub use transform::{apply_transform, rotation_geodesic_error, EulerRotation, LayoutParams, Mat3};

use crate::scalar::Real;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("empty cloud")]
    EmptyCloud,
    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },
    #[error("zero extent")]
    ZeroExtent,
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("layout parameters must be finite")]
    NonFiniteParams,
    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),
}

pub type Point3<T> = [T; 3];

#[inline]
pub(crate) fn sub<T: Real, const D: usize>(a: &[T; D], b: &[T; D]) -> [T; D] {
    let mut out = [T::zero(); D];
    for k in 0..D {
        out[k] = a[k] - b[k];
    }
    out
}

#[inline]
pub(crate) fn dist_sq<T: Real, const D: usize>(a: &[T; D], b: &[T; D]) -> T {
    let mut acc = T::zero();
    for k in 0..D {
        let d = a[k] - b[k];
        acc += d * d;
    }
    acc
}

/// Ordered set of 3D points with finite coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud<T> {
    points: Vec<Point3<T>>,
}

impl<T: Real> PointCloud<T> {
    /// Builds a cloud, rejecting NaN or infinite coordinates. Empty clouds
    /// are allowed here and rejected by the operations that consume them.
    pub fn new(points: Vec<Point3<T>>) -> Result<Self, GeometryError> {
        if let Some(index) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(GeometryError::NonFinite { index });
        }
        Ok(Self { points })
    }

    pub(crate) fn from_finite(points: Vec<Point3<T>>) -> Self {
        debug_assert!(points.iter().all(|p| p.iter().all(|c| c.is_finite())));
        Self { points }
    }

    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3<T>> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3<T>> {
        self.points.iter()
    }

    pub(crate) fn require_non_empty(&self) -> Result<(), GeometryError> {
        if self.points.is_empty() {
            Err(GeometryError::EmptyCloud)
        } else {
            Ok(())
        }
    }

    pub fn centroid(&self) -> Result<Point3<T>, GeometryError> {
        self.require_non_empty()?;
        let mut acc = [T::zero(); 3];
        for p in &self.points {
            for k in 0..3 {
                acc[k] += p[k];
            }
        }
        let n = T::from_usize(self.points.len()).unwrap();
        Ok(acc.map(|c| c / n))
    }

    pub fn aabb(&self) -> Result<Aabb<T>, GeometryError> {
        Aabb::from_points(&self.points)
    }

    /// Concatenates clouds in order.
    pub fn concat<'a>(clouds: impl IntoIterator<Item = &'a PointCloud<T>>) -> Self {
        let mut points = Vec::new();
        for c in clouds {
            points.extend_from_slice(&c.points);
        }
        Self { points }
    }

    /// Deterministic stride subsample down to at most `max` points.
    pub fn subsample_stride(&self, max: usize) -> Self {
        if max == 0 || self.points.len() <= max {
            return self.clone();
        }
        let n = self.points.len();
        let points = (0..max).map(|i| self.points[i * n / max]).collect();
        Self { points }
    }

    /// Converts every coordinate to another scalar type.
    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| p.map(|c| U::from_f64(c.as_f64()).unwrap()))
                .collect(),
        }
    }
}

impl<'a, T> IntoIterator for &'a PointCloud<T> {
    type Item = &'a Point3<T>;
    type IntoIter = std::slice::Iter<'a, Point3<T>>;

    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb<T> {
    pub min: Point3<T>,
    pub max: Point3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn from_points(points: &[Point3<T>]) -> Result<Self, GeometryError> {
        let first = points.first().ok_or(GeometryError::EmptyCloud)?;
        let mut min = *first;
        let mut max = *first;
        for p in &points[1..] {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Ok(Self { min, max })
    }

    pub fn extent(&self) -> Point3<T> {
        sub(&self.max, &self.min)
    }

    pub fn max_extent(&self) -> T {
        let e = self.extent();
        e[0].max(e[1]).max(e[2])
    }

    pub fn diagonal(&self) -> T {
        dist_sq(&self.max, &self.min).sqrt()
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut out = *self;
        for k in 0..3 {
            out.min[k] = out.min[k].min(other.min[k]);
            out.max[k] = out.max[k].max(other.max[k]);
        }
        out
    }
}
