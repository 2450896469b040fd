use super::{GeometryError, Point3, PointCloud};
use crate::scalar::Real;

/// Centroid and divisor used to normalize a cloud; kept so the mapping can
/// be inverted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord<T> {
    pub centroid: Point3<T>,
    pub divisor: T,
}

impl<T: Real> NormalizationRecord<T> {
    pub fn apply(&self, p: &Point3<T>) -> Point3<T> {
        [0, 1, 2].map(|k| (p[k] - self.centroid[k]) / self.divisor)
    }

    pub fn invert(&self, p: &Point3<T>) -> Point3<T> {
        [0, 1, 2].map(|k| p[k] * self.divisor + self.centroid[k])
    }

    pub fn denormalize(&self, cloud: &PointCloud<T>) -> PointCloud<T> {
        PointCloud::from_finite(cloud.iter().map(|p| self.invert(p)).collect())
    }
}

/// Centers the cloud on its centroid and divides by the largest AABB extent,
/// so the result has unit maximum extent.
pub fn normalize_cloud<T: Real>(cloud: &PointCloud<T>) -> Result<(PointCloud<T>, NormalizationRecord<T>), GeometryError> {
    let centroid = cloud.centroid()?;
    let divisor = cloud.aabb()?.max_extent();
    if !(divisor > T::zero()) {
        return Err(GeometryError::ZeroExtent);
    }
    let record = NormalizationRecord { centroid, divisor };
    let points = cloud.iter().map(|p| record.apply(p)).collect();
    Ok((PointCloud::from_finite(points), record))
}
