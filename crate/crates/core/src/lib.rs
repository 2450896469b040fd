//! Single-view scene composition from candidate 3D models.
//!
//! Given a scene pointmap (or depth map plus intrinsics), per-instance
//! masks and a handful of candidate point clouds per instance, `scenefit`
//! picks the candidate whose normalized shape best matches the observed
//! partial cloud and then fits a similarity transform (translation, Euler
//! rotation, isotropic scale) by minimizing a 3D Chamfer loss plus a
//! projected 2D Chamfer loss.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common case. File I/O and the synthetic
//! benchmark work in `f64`.

pub mod bench;
pub mod camera;
pub mod geometry;
pub mod ingest;
pub mod optimize;
pub mod pipeline;
mod scalar;
pub mod selection;

pub use scalar::Real;

pub type PointCloud64 = geometry::PointCloud<f64>;
pub type PointCloud32 = geometry::PointCloud<f32>;
pub type LayoutParams64 = geometry::LayoutParams<f64>;
pub type LayoutParams32 = geometry::LayoutParams<f32>;
pub type EulerRotation64 = geometry::EulerRotation<f64>;
pub type PinholeIntrinsics64 = camera::PinholeIntrinsics<f64>;
pub type PinholeIntrinsics32 = camera::PinholeIntrinsics<f32>;
pub type OptimizerConfig64 = optimize::OptimizerConfig<f64>;
pub type LossWeights64 = optimize::LossWeights<f64>;
pub type CandidateSet64 = selection::CandidateSet<f64>;

/// Mixes a base seed with a stream index (SplitMix64 finalizer), so that
/// independent consumers of one user seed get decorrelated generators.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
