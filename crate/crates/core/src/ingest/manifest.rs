use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::raster::{read_pfm_dims, read_pgm_dims};
use super::IngestError;
use crate::camera::PinholeIntrinsics;

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.5;

fn default_threshold() -> f64 {
    DEFAULT_CONFIDENCE_THRESHOLD
}

/// On-disk manifest (JSON). Paths are relative to the manifest's directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointmap_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<PinholeIntrinsics<f64>>,
    #[serde(default = "default_threshold")]
    pub confidence_threshold: f64,
    pub detections: Vec<DetectionEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DetectionEntry {
    pub instance_id: String,
    pub label: String,
    pub confidence: f64,
    pub bbox: [f64; 4],
    pub mask_path: String,
    pub candidate_paths: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeometrySource {
    Depth(PathBuf),
    Pointmap(PathBuf),
}

/// One validated detection, with paths resolved against the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub instance_id: String,
    pub label: String,
    pub confidence: f64,
    /// `(x_min, y_min, x_max, y_max)` in pixels.
    pub bbox: [f64; 4],
    pub mask_path: PathBuf,
    pub candidate_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneManifest {
    pub path: PathBuf,
    pub source: GeometrySource,
    pub intrinsics: Option<PinholeIntrinsics<f64>>,
    pub detections: Vec<DetectionRecord>,
    pub confidence_threshold: f64,
    /// Raster size `(width, height)` of the geometry source.
    pub dims: (usize, usize),
}

/// Parses and validates a manifest. Every referenced file must exist; mask
/// and intrinsics dimensions must match the geometry raster.
pub fn load_manifest(path: &Path) -> Result<SceneManifest, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let raw: ManifestFile =
        serde_json::from_str(&text).map_err(|e| IngestError::format(path, format!("invalid manifest: {e}")))?;
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |field: &str, rel: &str| -> Result<PathBuf, IngestError> {
        let p = root.join(rel);
        if !p.is_file() {
            return Err(IngestError::field(path, field, format!("file not found: {}", p.display())));
        }
        Ok(p)
    };

    let source = match (&raw.depth_path, &raw.pointmap_path) {
        (Some(d), None) => GeometrySource::Depth(resolve("depth_path", d)?),
        (None, Some(p)) => GeometrySource::Pointmap(resolve("pointmap_path", p)?),
        _ => return Err(IngestError::GeometrySource { path: path.to_path_buf() }),
    };
    let dims = match &source {
        GeometrySource::Depth(p) => {
            let (w, h, c) = read_pfm_dims(p)?;
            if c != 1 {
                return Err(IngestError::field(path, "depth_path", "depth PFM must have one channel"));
            }
            (w, h)
        }
        GeometrySource::Pointmap(p) => {
            let (w, h, c) = read_pfm_dims(p)?;
            if c != 3 {
                return Err(IngestError::field(path, "pointmap_path", "pointmap PFM must have three channels"));
            }
            (w, h)
        }
    };

    if !(0.0..=1.0).contains(&raw.confidence_threshold) {
        return Err(IngestError::field(path, "confidence_threshold", "must lie in [0, 1]"));
    }
    if let Some(cam) = &raw.intrinsics {
        cam.validate()
            .map_err(|e| IngestError::field(path, "intrinsics", e.to_string()))?;
        if cam.dims() != dims {
            return Err(IngestError::field(
                path,
                "intrinsics",
                format!("image size {:?} does not match raster {:?}", cam.dims(), dims),
            ));
        }
    } else if matches!(source, GeometrySource::Depth(_)) {
        return Err(IngestError::field(path, "intrinsics", "required when depth_path is given"));
    }

    let mut seen = std::collections::HashSet::new();
    let mut detections = Vec::with_capacity(raw.detections.len());
    for (i, d) in raw.detections.iter().enumerate() {
        let field = |name: &str| format!("detections[{i}].{name}");
        if d.instance_id.is_empty() || !seen.insert(d.instance_id.clone()) {
            return Err(IngestError::field(path, field("instance_id"), "must be non-empty and unique"));
        }
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(IngestError::field(path, field("confidence"), "must lie in [0, 1]"));
        }
        let [x0, y0, x1, y1] = d.bbox;
        let (w, h) = (dims.0 as f64, dims.1 as f64);
        if !(x0 >= 0.0 && y0 >= 0.0 && x1 <= w && y1 <= h && x0 < x1 && y0 < y1) {
            return Err(IngestError::field(path, field("bbox"), format!("{:?} outside {}x{} image or empty", d.bbox, dims.0, dims.1)));
        }
        let mask_path = resolve(&field("mask_path"), &d.mask_path)?;
        let mask_dims = read_pgm_dims(&mask_path)?;
        if mask_dims != dims {
            return Err(IngestError::field(
                path,
                field("mask_path"),
                format!("mask is {mask_dims:?} but geometry is {dims:?}"),
            ));
        }
        if d.candidate_paths.is_empty() {
            return Err(IngestError::field(path, field("candidate_paths"), "at least one candidate is required"));
        }
        let candidate_paths = d
            .candidate_paths
            .iter()
            .enumerate()
            .map(|(k, c)| resolve(&format!("detections[{i}].candidate_paths[{k}]"), c))
            .collect::<Result<Vec<_>, _>>()?;
        detections.push(DetectionRecord {
            instance_id: d.instance_id.clone(),
            label: d.label.clone(),
            confidence: d.confidence,
            bbox: d.bbox,
            mask_path,
            candidate_paths,
        });
    }

    Ok(SceneManifest {
        path: path.to_path_buf(),
        source,
        intrinsics: raw.intrinsics,
        detections,
        confidence_threshold: raw.confidence_threshold,
        dims,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{filter_detections, save_mask, save_pfm, InstanceMask, PfmImage};

    struct Job {
        dir: tempfile::TempDir,
    }

    impl Job {
        fn new() -> Self {
            let dir = tempfile::tempdir().unwrap();
            let img = PfmImage { width: 8, height: 6, channels: 1, data: vec![1.0; 48] };
            save_pfm(&img, &dir.path().join("depth.pfm")).unwrap();
            let img3 = PfmImage { width: 8, height: 6, channels: 3, data: vec![1.0; 144] };
            save_pfm(&img3, &dir.path().join("pm.pfm")).unwrap();
            for i in 0..3 {
                save_mask(&InstanceMask::new(8, 6, vec![true; 48]), &dir.path().join(format!("m{i}.pgm"))).unwrap();
                std::fs::write(dir.path().join(format!("c{i}.ply")), b"ply\n").unwrap();
            }
            save_mask(&InstanceMask::new(4, 4, vec![true; 16]), &dir.path().join("small.pgm")).unwrap();
            Job { dir }
        }

        fn write(&self, json: serde_json::Value) -> PathBuf {
            let p = self.dir.path().join("manifest.json");
            std::fs::write(&p, serde_json::to_string_pretty(&json).unwrap()).unwrap();
            p
        }
    }

    fn det(i: usize, conf: f64) -> serde_json::Value {
        serde_json::json!({
            "instance_id": format!("obj{i}"),
            "label": "thing",
            "confidence": conf,
            "bbox": [0.0, 0.0, 4.0, 3.0],
            "mask_path": format!("m{i}.pgm"),
            "candidate_paths": [format!("c{i}.ply")],
        })
    }

    fn cam() -> serde_json::Value {
        serde_json::json!({"focal": 10.0, "cx": 4.0, "cy": 3.0, "width": 8, "height": 6})
    }

    #[test]
    fn three_detections() {
        let job = Job::new();
        let p = job.write(serde_json::json!({
            "depth_path": "depth.pfm", "intrinsics": cam(),
            "detections": [det(0, 0.9), det(1, 0.5), det(2, 0.4)],
        }));
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.detections.len(), 3);
        assert_eq!(m.confidence_threshold, 0.5);
        assert_eq!(m.dims, (8, 6));
        let kept = filter_detections(&m);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].instance_id, "obj0");
    }

    #[test]
    fn threshold_extremes() {
        let job = Job::new();
        let mk = |theta: f64| {
            job.write(serde_json::json!({
                "pointmap_path": "pm.pfm", "confidence_threshold": theta,
                "detections": [det(0, 0.0), det(1, 0.3), det(2, 1.0)],
            }))
        };
        let m = load_manifest(&mk(0.0)).unwrap();
        let ids: Vec<_> = filter_detections(&m).into_iter().map(|d| d.instance_id).collect();
        assert_eq!(ids, ["obj1", "obj2"]);
        // idempotent
        let again = SceneManifest { detections: filter_detections(&m), ..m.clone() };
        assert_eq!(filter_detections(&again), again.detections);
        let m = load_manifest(&mk(1.0)).unwrap();
        assert!(filter_detections(&m).is_empty());
    }

    #[test]
    fn missing_mask_is_named() {
        let job = Job::new();
        let mut d = det(0, 0.9);
        d["mask_path"] = "nope.pgm".into();
        let p = job.write(serde_json::json!({"depth_path": "depth.pfm", "intrinsics": cam(), "detections": [d]}));
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("nope.pgm") && err.contains("mask_path"), "{err}");
    }

    #[test]
    fn both_sources_rejected() {
        let job = Job::new();
        let p = job.write(serde_json::json!({
            "depth_path": "depth.pfm", "pointmap_path": "pm.pfm", "intrinsics": cam(), "detections": [],
        }));
        assert!(load_manifest(&p).unwrap_err().to_string().contains("exactly one geometry source"));
        let p = job.write(serde_json::json!({"detections": []}));
        assert!(load_manifest(&p).unwrap_err().to_string().contains("exactly one geometry source"));
    }

    #[test]
    fn bbox_and_dimension_checks() {
        let job = Job::new();
        let mut d = det(0, 0.9);
        d["bbox"] = serde_json::json!([0.0, 0.0, 9.0, 3.0]);
        let p = job.write(serde_json::json!({"depth_path": "depth.pfm", "intrinsics": cam(), "detections": [d]}));
        assert!(load_manifest(&p).unwrap_err().to_string().contains("bbox"));

        let mut d = det(0, 0.9);
        d["mask_path"] = "small.pgm".into();
        let p = job.write(serde_json::json!({"depth_path": "depth.pfm", "intrinsics": cam(), "detections": [d]}));
        assert!(load_manifest(&p).unwrap_err().to_string().contains("mask is"));

        let p = job.write(serde_json::json!({"depth_path": "depth.pfm", "detections": []}));
        assert!(load_manifest(&p).unwrap_err().to_string().contains("intrinsics"));

        let mut d = det(0, 0.9);
        d["candidate_paths"] = serde_json::json!([]);
        let p = job.write(serde_json::json!({"pointmap_path": "pm.pfm", "detections": [d]}));
        assert!(load_manifest(&p).unwrap_err().to_string().contains("candidate"));
    }

    #[test]
    fn malformed_json() {
        let job = Job::new();
        let p = job.write(serde_json::json!({"depth_path": 3, "detections": []}));
        assert!(load_manifest(&p).unwrap_err().to_string().contains("invalid manifest"));
        let p = job.write(serde_json::json!({"pointmap_path": "pm.pfm", "detections": [], "extra": 1}));
        assert!(load_manifest(&p).is_err());
    }
}
