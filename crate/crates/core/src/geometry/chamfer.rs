use super::{GeometryError, NearestNeighborIndex, PointCloud};
use crate::scalar::Real;

/// Mean over `from` of the squared distance to the nearest indexed point.
pub fn directed_mean_sq<T: Real, const D: usize>(from: &[[T; D]], to: &NearestNeighborIndex<T, D>) -> T {
    let mut acc = T::zero();
    for p in from {
        acc += to.nearest(p).1;
    }
    acc / T::from_usize(from.len()).unwrap()
}

/// Bidirectional Chamfer distance over squared Euclidean distances, each
/// direction averaged over its source set.
pub fn chamfer_distance_points<T: Real, const D: usize>(a: &[[T; D]], b: &[[T; D]]) -> Result<T, GeometryError> {
    let index_a = NearestNeighborIndex::build(a)?;
    let index_b = NearestNeighborIndex::build(b)?;
    Ok(directed_mean_sq(a, &index_b) + directed_mean_sq(b, &index_a))
}

pub fn chamfer_distance<T: Real>(a: &PointCloud<T>, b: &PointCloud<T>) -> Result<T, GeometryError> {
    chamfer_distance_points(a.points(), b.points())
}

/// F-score on a 0..=100 scale: harmonic mean of the fraction of `pred`
/// points within `threshold` of `gt` and the fraction of `gt` points within
/// `threshold` of `pred`.
pub fn f_score_points<T: Real, const D: usize>(pred: &[[T; D]], gt: &[[T; D]], threshold: T) -> Result<T, GeometryError> {
    if !(threshold > T::zero()) {
        return Err(GeometryError::InvalidThreshold(threshold.as_f64()));
    }
    let index_pred = NearestNeighborIndex::build(pred)?;
    let index_gt = NearestNeighborIndex::build(gt)?;
    let limit = threshold * threshold;
    let hits = |from: &[[T; D]], to: &NearestNeighborIndex<T, D>| {
        from.iter().filter(|p| to.nearest(p).1 <= limit).count()
    };
    let precision = T::from_usize(hits(pred, &index_gt)).unwrap() / T::from_usize(pred.len()).unwrap();
    let recall = T::from_usize(hits(gt, &index_pred)).unwrap() / T::from_usize(gt.len()).unwrap();
    if precision + recall == T::zero() {
        return Ok(T::zero());
    }
    Ok(T::lit(200.0) * precision * recall / (precision + recall))
}

pub fn f_score<T: Real>(pred: &PointCloud<T>, gt: &PointCloud<T>, threshold: T) -> Result<T, GeometryError> {
    f_score_points(pred.points(), gt.points(), threshold)
}
