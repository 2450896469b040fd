//! Synthetic scenes with known layouts: analytic primitives ray-cast into
//! depth and masks, candidate sets with decoys, and recovery scoring.

mod candidates;
mod job;
mod recovery;
mod scene;
mod shapes;

use std::path::PathBuf;

pub use candidates::{candidate_shapes, make_candidates};
pub use job::{write_job, GroundTruthFile, GroundTruthInstance, GROUND_TRUTH_FILE, MANIFEST_FILE};
pub use recovery::{evaluate_recovery, evaluate_recovery_with, InstanceRecovery, RecoveryReport, Tolerances, TruthRef};
pub use scene::{generate_scene, raycast_scene, BenchConfig, CameraConfig, GeometryOutput, ShapeKind, SyntheticScene};
pub use shapes::{sample_posed_surface, sample_surface, PrimitiveSpec, Shape, MIN_OBJECT_DEPTH};

pub(crate) use crate::derive_seed;
use crate::ingest::IngestError;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),
    #[error("primitive '{label}' reaches z = {nearest_z:.4}, too close to or behind the camera")]
    BehindCamera { label: String, nearest_z: f64 },
    #[error("invalid bench config: {0}")]
    InvalidConfig(String),
    #[error("no acceptable scene after {attempts} attempts")]
    GenerationFailed { attempts: usize },
    #[error("{path}: invalid ground truth: {message}")]
    Sidecar { path: PathBuf, message: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}
