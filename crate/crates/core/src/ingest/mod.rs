//! File-backed scene jobs: manifest, masks, depth/pointmap rasters and
//! candidate point clouds.

mod manifest;
mod ply;
mod raster;

use std::path::{Path, PathBuf};

pub use manifest::{load_manifest, DetectionEntry, DetectionRecord, GeometrySource, ManifestFile, SceneManifest, DEFAULT_CONFIDENCE_THRESHOLD};
pub use ply::{load_point_cloud, save_point_cloud};
pub use raster::{load_mask, load_pfm, read_pfm_dims, read_pgm_dims, save_mask, save_pfm, InstanceMask, PfmImage};

use crate::camera::{backproject_depth, estimate_focal, CameraError, DepthMap, PinholeIntrinsics, Pointmap};
use crate::geometry::{Point3, PointCloud};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: field '{field}': {message}")]
    Field { path: PathBuf, field: String, message: String },
    #[error("{path}: exactly one geometry source (depth_path or pointmap_path) is required")]
    GeometrySource { path: PathBuf },
    #[error("empty instance")]
    EmptyInstance,
    #[error("mask is {actual:?} but pointmap is {expected:?}")]
    DimensionMismatch { expected: (usize, usize), actual: (usize, usize) },
    #[error(transparent)]
    Camera(#[from] CameraError),
}

impl IngestError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn format(path: &Path, message: impl Into<String>) -> Self {
        Self::Format { path: path.to_path_buf(), message: message.into() }
    }

    pub(crate) fn field(path: &Path, field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Field { path: path.to_path_buf(), field: field.into(), message: message.into() }
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`,
/// so readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    let name = path
        .file_name()
        .ok_or_else(|| IngestError::format(path, "not a file path"))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| IngestError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        IngestError::io(path, e)
    })
}

/// Records whose confidence strictly exceeds the manifest threshold, in
/// input order.
pub fn filter_detections(manifest: &SceneManifest) -> Vec<DetectionRecord> {
    manifest
        .detections
        .iter()
        .filter(|d| d.confidence > manifest.confidence_threshold)
        .cloned()
        .collect()
}

/// Pointmap entries selected by the mask and valid in the pointmap, in
/// row-major order.
pub fn extract_instance_cloud(pm: &Pointmap<f64>, mask: &InstanceMask) -> Result<PointCloud<f64>, IngestError> {
    if (mask.width, mask.height) != pm.dims() {
        return Err(IngestError::DimensionMismatch { expected: pm.dims(), actual: (mask.width, mask.height) });
    }
    let pts: Vec<Point3<f64>> = pm
        .points
        .iter()
        .zip(&pm.valid)
        .zip(&mask.bits)
        .filter(|((_, ok), sel)| **ok && **sel)
        .map(|((p, _), _)| *p)
        .collect();
    if pts.is_empty() {
        return Err(IngestError::EmptyInstance);
    }
    Ok(PointCloud::new(pts).expect("valid pointmap entries are finite"))
}

pub fn load_depth(path: &Path) -> Result<DepthMap<f64>, IngestError> {
    let img = load_pfm(path)?;
    if img.channels != 1 {
        return Err(IngestError::format(path, "depth PFM must have one channel (Pf)"));
    }
    Ok(DepthMap::from_raw(img.width, img.height, img.data.iter().map(|&v| v as f64).collect())?)
}

pub fn save_depth(depth: &DepthMap<f64>, path: &Path) -> Result<(), IngestError> {
    let data = depth
        .values
        .iter()
        .zip(&depth.valid)
        .map(|(&v, &ok)| if ok { v as f32 } else { 0.0 })
        .collect();
    save_pfm(&PfmImage { width: depth.width, height: depth.height, channels: 1, data }, path)
}

pub fn load_pointmap(path: &Path) -> Result<Pointmap<f64>, IngestError> {
    let img = load_pfm(path)?;
    if img.channels != 3 {
        return Err(IngestError::format(path, "pointmap PFM must have three channels (PF)"));
    }
    let pts = img.data.chunks_exact(3).map(|c| [c[0] as f64, c[1] as f64, c[2] as f64]).collect();
    Ok(Pointmap::from_raw(img.width, img.height, pts)?)
}

pub fn save_pointmap(pm: &Pointmap<f64>, path: &Path) -> Result<(), IngestError> {
    let mut data = Vec::with_capacity(pm.points.len() * 3);
    for (p, &ok) in pm.points.iter().zip(&pm.valid) {
        let p = if ok { *p } else { [0.0; 3] };
        data.extend(p.iter().map(|&v| v as f32));
    }
    save_pfm(&PfmImage { width: pm.width, height: pm.height, channels: 3, data }, path)
}

/// Loads the manifest's geometry as a pointmap plus intrinsics. Depth maps
/// are back-projected with the manifest intrinsics; pointmaps without
/// explicit intrinsics get a focal estimate.
pub fn load_scene_geometry(manifest: &SceneManifest) -> Result<(Pointmap<f64>, PinholeIntrinsics<f64>, bool), IngestError> {
    match &manifest.source {
        GeometrySource::Depth(path) => {
            let cam = manifest
                .intrinsics
                .ok_or_else(|| IngestError::field(&manifest.path, "intrinsics", "required with depth_path"))?;
            let depth = load_depth(path)?;
            Ok((backproject_depth(&depth, &cam)?, cam, false))
        }
        GeometrySource::Pointmap(path) => {
            let pm = load_pointmap(path)?;
            match manifest.intrinsics {
                Some(cam) => Ok((pm, cam, false)),
                None => {
                    let cam = estimate_focal(&pm)?;
                    Ok((pm, cam, true))
                }
            }
        }
    }
}
