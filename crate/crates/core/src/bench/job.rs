use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::candidates::make_candidates;
use super::scene::{BenchConfig, GeometryOutput, SyntheticScene};
use super::shapes::PrimitiveSpec;
use super::{derive_seed, BenchError};
use crate::camera::{backproject_depth, PinholeIntrinsics};
use crate::geometry::PointCloud;
use crate::ingest::{
    load_point_cloud, save_depth, save_mask, save_point_cloud, save_pointmap, write_atomic, DetectionEntry, IngestError,
    InstanceMask, ManifestFile,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthInstance {
    pub instance_id: String,
    pub primitive: PrimitiveSpec,
    /// Canonical surface sample (identical to candidate 0), relative to the
    /// sidecar's directory.
    pub model_path: String,
    pub occlusion_fraction: f64,
    pub visible_pixels: usize,
}

/// Ground-truth sidecar written next to a synthetic job's manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthFile {
    pub seed: u64,
    pub camera: PinholeIntrinsics<f64>,
    pub scene_diagonal: f64,
    pub instances: Vec<GroundTruthInstance>,
}

impl GroundTruthFile {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| BenchError::Sidecar { path: path.to_path_buf(), message: e.to_string() })
    }

    /// Loads each instance's canonical sample, resolving paths against the
    /// directory of `sidecar_path`.
    pub fn load_models(&self, sidecar_path: &Path) -> Result<Vec<PointCloud<f64>>, BenchError> {
        let root = sidecar_path.parent().unwrap_or_else(|| Path::new("."));
        self.instances
            .iter()
            .map(|i| load_point_cloud(&root.join(&i.model_path)).map_err(BenchError::from))
            .collect()
    }
}

/// Pixel bounding box `(x_min, y_min, x_max, y_max)` with exclusive maxima.
fn mask_bbox(mask: &InstanceMask) -> [f64; 4] {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for (i, _) in mask.bits.iter().enumerate().filter(|(_, b)| **b) {
        let (x, y) = (i % mask.width, i / mask.width);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x + 1);
        y1 = y1.max(y + 1);
    }
    [x0 as f64, y0 as f64, x1 as f64, y1 as f64]
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

/// Writes a manifest-rooted job into `out_dir`: geometry raster, one mask
/// and `config.candidates` candidate clouds per visible primitive, the
/// manifest and the ground-truth sidecar. Returns the manifest path.
pub fn write_job(scene: &SyntheticScene, config: &BenchConfig, seed: u64, out_dir: &Path) -> Result<PathBuf, BenchError> {
    let mkdir = |p: PathBuf| std::fs::create_dir_all(&p).map_err(|e| BenchError::from(IngestError::io(&p, e)));
    mkdir(out_dir.join("masks"))?;
    mkdir(out_dir.join("candidates"))?;

    let (depth_path, pointmap_path, intrinsics) = match config.geometry {
        GeometryOutput::Depth => {
            save_depth(&scene.depth, &out_dir.join("depth.pfm"))?;
            (Some("depth.pfm".to_string()), None, Some(scene.cam))
        }
        GeometryOutput::Pointmap => {
            let pm = backproject_depth(&scene.depth, &scene.cam).map_err(IngestError::from)?;
            save_pointmap(&pm, &out_dir.join("pointmap.pfm"))?;
            (None, Some("pointmap.pfm".to_string()), None)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xc0f1));
    let mut detections = Vec::new();
    let mut truth = Vec::new();
    for (i, spec) in scene.primitives.iter().enumerate() {
        let id = format!("inst_{i:02}");
        let confidence = rng.random_range(0.6..1.0);
        let mask = &scene.masks[i];
        let candidates = make_candidates(spec, config.candidates, scene.sample_seeds[i])?;
        let mut candidate_paths = Vec::new();
        for (k, cloud) in &candidates.candidates {
            let rel = format!("candidates/{id}_k{k}.ply");
            save_point_cloud(cloud, &out_dir.join(&rel))?;
            candidate_paths.push(rel);
        }
        if mask.count() > 0 {
            let mask_rel = format!("masks/{id}.pgm");
            save_mask(mask, &out_dir.join(&mask_rel))?;
            detections.push(DetectionEntry {
                instance_id: id.clone(),
                label: spec.label.clone(),
                confidence,
                bbox: mask_bbox(mask),
                mask_path: mask_rel,
                candidate_paths: candidate_paths.clone(),
            });
        }
        truth.push(GroundTruthInstance {
            instance_id: id,
            primitive: spec.clone(),
            model_path: candidate_paths[0].clone(),
            occlusion_fraction: scene.occlusion_fraction[i],
            visible_pixels: mask.count(),
        });
    }

    let manifest = ManifestFile {
        depth_path,
        pointmap_path,
        intrinsics,
        confidence_threshold: crate::ingest::DEFAULT_CONFIDENCE_THRESHOLD,
        detections,
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    write_atomic(&manifest_path, &to_json(&manifest))?;
    let sidecar = GroundTruthFile { seed, camera: scene.cam, scene_diagonal: scene.scene_diagonal(), instances: truth };
    write_atomic(&out_dir.join(GROUND_TRUTH_FILE), &to_json(&sidecar))?;
    Ok(manifest_path)
}
