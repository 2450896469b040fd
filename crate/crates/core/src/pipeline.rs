//! Manifest-to-layout pipeline: instance preparation, per-instance
//! selection and fitting, the serialized scene layout, traces and
//! evaluation against ground truth.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{evaluate_recovery_with, BenchError, GroundTruthFile, RecoveryReport, Tolerances, TruthRef};
use crate::camera::{project, PinholeIntrinsics};
use crate::derive_seed;
use crate::geometry::{apply_transform, chamfer_distance, chamfer_distance_points, f_score, f_score_points, GeometryError, LayoutParams, PointCloud};
use crate::ingest::{
    extract_instance_cloud, filter_detections, load_manifest, load_mask, load_point_cloud, load_scene_geometry, DetectionRecord,
    IngestError, SceneManifest,
};
use crate::optimize::{optimize_layout, LossMode, LossProblem, LossWeights, OptimizationTrace, OptimizeError, OptimizerConfig};
use crate::selection::{select_model, selection_ablation_passthrough, CandidateSet, SelectionError, SelectionReport, DEFAULT_CANDIDATES};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// First line of a layout file; the rest of the line is the timestamp.
pub const LAYOUT_HEADER_PREFIX: &str = "# generated ";
/// F-score thresholds: scene units in 3D, pixels in 2D.
pub const F_SCORE_THRESHOLD_3D: f64 = 0.01;
pub const F_SCORE_THRESHOLD_2D: f64 = 1.0;
/// Default per-cloud point cap used by the command-line tool.
pub const DEFAULT_MAX_POINTS: usize = 4096;

const SELECTION_STREAM: u64 = 1;
const OPTIMIZER_STREAM: u64 = 2;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("{path}: invalid layout file: {message}")]
    Layout { path: PathBuf, message: String },
    #[error("instance sets differ; missing from layout: {missing:?}; not in ground truth: {extra:?}")]
    InstanceMismatch { missing: Vec<String>, extra: Vec<String> },
}

impl PipelineError {
    /// Failures of the numerical stages, as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Self::Optimize(OptimizeError::InvalidConfig(_)) => false,
            Self::Optimize(_) | Self::Geometry(_) => true,
            _ => false,
        }
    }
}

/// Why one instance produced no output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFailure {
    pub instance_id: String,
    pub error: String,
    pub numerical: bool,
}

impl InstanceFailure {
    fn new(instance_id: &str, err: &PipelineError) -> Self {
        Self { instance_id: instance_id.to_string(), error: err.to_string(), numerical: err.is_numerical() }
    }
}

/// An instance ready for selection and fitting.
#[derive(Debug, Clone)]
pub struct PreparedInstance {
    /// Position among the detections that passed the confidence filter.
    pub index: usize,
    pub record: DetectionRecord,
    /// Candidate paths relative to the manifest directory.
    pub candidate_paths: Vec<String>,
    pub target: PointCloud<f64>,
    pub candidates: CandidateSet<f64>,
}

#[derive(Debug)]
pub struct PreparedScene {
    pub manifest: SceneManifest,
    pub cam: PinholeIntrinsics<f64>,
    pub focal_estimated: bool,
    /// Detections dropped by the confidence filter.
    pub filtered_out: usize,
    pub instances: Vec<Result<PreparedInstance, InstanceFailure>>,
}

fn relative_to(path: &Path, root: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().into_owned()
}

fn prepare_instance(
    index: usize,
    record: &DetectionRecord,
    root: &Path,
    pm: &crate::camera::Pointmap<f64>,
) -> Result<PreparedInstance, PipelineError> {
    let mask = load_mask(&record.mask_path)?;
    let target = extract_instance_cloud(pm, &mask)?;
    let clouds = record
        .candidate_paths
        .iter()
        .map(|p| load_point_cloud::<f64>(p))
        .collect::<Result<Vec<_>, _>>()?;
    let candidates = CandidateSet::new(record.instance_id.clone(), clouds, DEFAULT_CANDIDATES)?;
    Ok(PreparedInstance {
        index,
        record: record.clone(),
        candidate_paths: record.candidate_paths.iter().map(|p| relative_to(p, root)).collect(),
        target,
        candidates,
    })
}

/// Loads and validates the manifest, resolves the camera (estimating the
/// focal length when the manifest has none) and extracts every confident
/// instance. Per-instance problems are reported, not raised.
pub fn prepare_scene(manifest_path: &Path) -> Result<PreparedScene, PipelineError> {
    let manifest = load_manifest(manifest_path)?;
    let (pm, cam, focal_estimated) = load_scene_geometry(&manifest)?;
    let root = manifest_path.parent().unwrap_or_else(|| Path::new("")).to_path_buf();
    let kept = filter_detections(&manifest);
    let filtered_out = manifest.detections.len() - kept.len();
    let instances = kept
        .iter()
        .enumerate()
        .map(|(i, rec)| prepare_instance(i, rec, &root, &pm).map_err(|e| InstanceFailure::new(&rec.instance_id, &e)))
        .collect();
    Ok(PreparedScene { manifest, cam, focal_estimated, filtered_out, instances })
}

/// Selection report plus the label and chosen path, as written by the
/// select stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub instance_id: String,
    pub label: String,
    /// Normalized Chamfer score per candidate; `null` for degenerate ones.
    pub scores: Vec<Option<f64>>,
    pub chosen: usize,
    pub chosen_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub tool_version: String,
    pub manifest: String,
    pub selections: Vec<SelectionEntry>,
    pub failures: Vec<InstanceFailure>,
}

fn finite_scores(scores: &Option<Vec<f64>>) -> Option<Vec<Option<f64>>> {
    scores.as_ref().map(|s| s.iter().map(|v| v.is_finite().then_some(*v)).collect())
}

pub fn select_instance(inst: &PreparedInstance) -> Result<SelectionEntry, PipelineError> {
    let report = select_model(&inst.candidates, &inst.target)?;
    Ok(SelectionEntry {
        instance_id: inst.record.instance_id.clone(),
        label: inst.record.label.clone(),
        scores: finite_scores(&report.scores).unwrap_or_default(),
        chosen: report.chosen,
        chosen_path: inst.candidate_paths[report.chosen].clone(),
    })
}

/// Settings for the fitting stage. `config.seed` is the base seed from
/// which per-instance selection and optimizer seeds are derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub weights: LossWeights<f64>,
    pub config: OptimizerConfig<f64>,
    pub selection: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            config: OptimizerConfig { max_points: Some(DEFAULT_MAX_POINTS), ..OptimizerConfig::default() },
            selection: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutInstance {
    pub instance_id: String,
    pub label: String,
    pub chosen_candidate: usize,
    /// Relative to the manifest directory.
    pub candidate_path: String,
    /// `None` when the candidate was picked without scoring.
    pub selection_scores: Option<Vec<Option<f64>>>,
    pub params: LayoutParams<f64>,
    pub loss3d: Option<f64>,
    pub loss2d: Option<f64>,
    pub total: Option<f64>,
    pub f_score_3d: Option<f64>,
    pub f_score_2d: Option<f64>,
    pub chosen_epoch: usize,
}

/// Everything produced for one fitted instance.
#[derive(Debug, Clone)]
pub struct InstanceFit {
    pub layout: LayoutInstance,
    pub trace: OptimizationTrace<f64>,
    /// Chosen candidate placed by the fitted layout.
    pub placed: PointCloud<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// 3D and 2D Chamfer distances and F-scores of `pred` against `gt`. The 2D
/// values are `None` when either cloud has points at or behind the camera.
pub fn cloud_metrics(pred: &PointCloud<f64>, gt: &PointCloud<f64>, cam: &PinholeIntrinsics<f64>) -> Result<CloudMetrics, GeometryError> {
    let cd_3d = chamfer_distance(pred, gt)?;
    let f_score_3d = f_score(pred, gt, F_SCORE_THRESHOLD_3D)?;
    let (cd_2d, f_score_2d) = match (project(pred, cam), project(gt, cam)) {
        (Ok(a), Ok(b)) => (
            Some(chamfer_distance_points(&a, &b)?),
            Some(f_score_points(&a, &b, F_SCORE_THRESHOLD_2D)?),
        ),
        _ => (None, None),
    };
    Ok(CloudMetrics { cd_3d, cd_2d, f_score_3d, f_score_2d })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudMetrics {
    pub cd_3d: f64,
    pub cd_2d: Option<f64>,
    pub f_score_3d: f64,
    pub f_score_2d: Option<f64>,
}

/// Selection (or seeded passthrough) followed by layout optimization.
pub fn fit_instance(inst: &PreparedInstance, cam: &PinholeIntrinsics<f64>, opts: &FitOptions) -> Result<InstanceFit, PipelineError> {
    let base = opts.config.seed;
    let report: SelectionReport<f64> = if opts.selection {
        select_model(&inst.candidates, &inst.target)?
    } else {
        selection_ablation_passthrough(&inst.candidates, derive_seed(derive_seed(base, SELECTION_STREAM), inst.index as u64))
    };
    let model = inst.candidates.get(report.chosen).expect("chosen index is in the set");
    let config = OptimizerConfig { seed: derive_seed(derive_seed(base, OPTIMIZER_STREAM), inst.index as u64), ..opts.config };
    let (params, trace) = optimize_layout(model, &inst.target, cam, &opts.weights, &config)?;

    let (m, t) = match config.max_points {
        Some(max) => (model.subsample_stride(max), inst.target.subsample_stride(max)),
        None => (model.clone(), inst.target.clone()),
    };
    let breakdown = LossProblem::new(&m, &t, cam)
        .and_then(|mut p| p.evaluate(&params, opts.weights.lambda1, opts.weights.lambda2))
        .map(|e| e.loss)
        .ok();
    let placed = apply_transform(model, &params)?;
    let metrics = cloud_metrics(&placed, &inst.target, cam).ok();
    Ok(InstanceFit {
        layout: LayoutInstance {
            instance_id: inst.record.instance_id.clone(),
            label: inst.record.label.clone(),
            chosen_candidate: report.chosen,
            candidate_path: inst.candidate_paths[report.chosen].clone(),
            selection_scores: finite_scores(&report.scores),
            params,
            loss3d: breakdown.and_then(|b| finite(b.loss3d)),
            loss2d: breakdown.and_then(|b| finite(b.loss2d)),
            total: trace.chosen().loss.and_then(finite),
            f_score_3d: metrics.map(|m| m.f_score_3d),
            f_score_2d: metrics.and_then(|m| m.f_score_2d),
            chosen_epoch: trace.chosen_epoch,
        },
        trace,
        placed,
    })
}

/// Serialized scene layout. The timestamp lives only in the header line
/// written by [`SceneLayoutFile::render`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneLayoutFile {
    pub tool_version: String,
    pub seed: u64,
    /// Absolute path of the input manifest.
    pub manifest: String,
    pub camera: PinholeIntrinsics<f64>,
    pub focal_estimated: bool,
    pub mode: LossMode,
    pub selection: bool,
    pub weights: LossWeights<f64>,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub phase1_iters: usize,
    pub instances: Vec<LayoutInstance>,
    pub failures: Vec<InstanceFailure>,
}

impl SceneLayoutFile {
    pub fn new(scene: &PreparedScene, opts: &FitOptions, manifest_path: &Path) -> Self {
        let manifest = std::path::absolute(manifest_path).unwrap_or_else(|_| manifest_path.to_path_buf());
        Self {
            tool_version: TOOL_VERSION.to_string(),
            seed: opts.config.seed,
            manifest: manifest.to_string_lossy().into_owned(),
            camera: scene.cam,
            focal_estimated: scene.focal_estimated,
            mode: opts.config.mode,
            selection: opts.selection,
            weights: opts.weights,
            epochs: opts.config.epochs,
            iters_per_epoch: opts.config.iters_per_epoch,
            phase1_iters: opts.config.phase1_iters,
            instances: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn render(&self, timestamp: &str) -> String {
        let body = serde_json::to_string_pretty(self).expect("serializable");
        format!("{LAYOUT_HEADER_PREFIX}{timestamp}\n{body}\n")
    }

    /// Parses a rendered layout, skipping `#` header lines.
    pub fn parse(text: &str, path: &Path) -> Result<Self, PipelineError> {
        let body: String = text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
        serde_json::from_str(&body).map_err(|e| PipelineError::Layout { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Directory the candidate paths are relative to.
    pub fn manifest_dir(&self) -> PathBuf {
        Path::new(&self.manifest).parent().map(Path::to_path_buf).unwrap_or_default()
    }

    /// Loads each instance's chosen candidate and places it.
    pub fn placed_models(&self) -> Result<Vec<PointCloud<f64>>, PipelineError> {
        let root = self.manifest_dir();
        self.instances
            .iter()
            .map(|i| {
                let model = load_point_cloud::<f64>(&root.join(&i.candidate_path))?;
                Ok(apply_transform(&model, &i.params)?)
            })
            .collect()
    }
}

/// Per-iteration trace as CSV, followed by `#` lines with each epoch's
/// initial and final parameters and the chosen epoch.
pub fn render_trace(trace: &OptimizationTrace<f64>) -> String {
    use std::fmt::Write;
    let mut out = String::from("epoch,iteration,loss3d,loss2d,total,excluded\n");
    let mut iter = 0usize;
    let mut last_epoch = usize::MAX;
    for (epoch, rec) in &trace.iterations {
        if *epoch != last_epoch {
            iter = 0;
            last_epoch = *epoch;
        }
        let _ = writeln!(out, "{epoch},{iter},{},{},{},{}", rec.loss3d, rec.loss2d, rec.total, rec.excluded);
        iter += 1;
    }
    let fmt = |p: &LayoutParams<f64>| p.to_array().map(|v| v.to_string()).join(" ");
    for (i, e) in trace.epochs.iter().enumerate() {
        let loss = e.loss.map_or_else(|| "failed".to_string(), |l| l.to_string());
        let _ = write!(out, "# epoch {i} initial {} final {} loss {loss}", fmt(&e.initial), fmt(&e.params));
        if let Some(f) = &e.failure {
            let _ = write!(out, " error {f}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "# chosen_epoch {}", trace.chosen_epoch);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub instance_id: String,
    #[serde(flatten)]
    pub metrics: CloudMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub instances: Vec<InstanceMetrics>,
    pub mean_cd_3d: f64,
    pub mean_cd_2d: Option<f64>,
    pub mean_f_score_3d: f64,
    pub mean_f_score_2d: Option<f64>,
    pub recovery: Option<RecoveryReport>,
}

impl MetricsReport {
    pub fn render_text(&self) -> String {
        use std::fmt::Write;
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
        let mut out = String::new();
        for i in &self.instances {
            let m = &i.metrics;
            let _ = writeln!(out, "[instance {}]", i.instance_id);
            let _ = writeln!(out, "cd_3d = {:.6e}", m.cd_3d);
            let _ = writeln!(out, "cd_2d = {}", opt(m.cd_2d));
            let _ = writeln!(out, "f_score_3d@{F_SCORE_THRESHOLD_3D} = {:.4}", m.f_score_3d);
            let _ = writeln!(out, "f_score_2d@{F_SCORE_THRESHOLD_2D} = {}", opt(m.f_score_2d));
            if let Some(r) = self.recovery.as_ref().and_then(|r| r.instances.iter().find(|x| x.label == i.instance_id)) {
                let _ = writeln!(out, "recovered = {}", r.success);
            }
            out.push('\n');
        }
        let _ = writeln!(out, "[scene]");
        let _ = writeln!(out, "instances = {}", self.instances.len());
        let _ = writeln!(out, "mean_cd_3d = {:.6e}", self.mean_cd_3d);
        let _ = writeln!(out, "mean_cd_2d = {}", opt(self.mean_cd_2d));
        let _ = writeln!(out, "mean_f_score_3d@{F_SCORE_THRESHOLD_3D} = {:.4}", self.mean_f_score_3d);
        let _ = writeln!(out, "mean_f_score_2d@{F_SCORE_THRESHOLD_2D} = {}", opt(self.mean_f_score_2d));
        if let Some(r) = &self.recovery {
            let t = &r.tolerances;
            let _ = writeln!(
                out,
                "recovery_success_rate = {:.4} ({}/{}; translation {}% of diagonal, rotation {} deg, scale {})",
                r.success_rate, r.succeeded, r.evaluated, t.translation_pct, t.rotation_deg, t.scale_rel
            );
            for i in &r.instances {
                let _ = writeln!(
                    out,
                    "recovery[{}] {} translation_pct={} rotation_deg={} scale_rel={} {}",
                    i.index,
                    i.label,
                    opt(i.translation_pct),
                    opt(i.rotation_error_deg),
                    opt(i.scale_rel_error),
                    i.reason.as_deref().unwrap_or("ok"),
                );
            }
        }
        out
    }
}

/// Reference for evaluation: a bench sidecar or another layout file.
#[derive(Debug, Clone)]
pub enum GroundTruth {
    Bench { file: GroundTruthFile, path: PathBuf },
    Layout(SceneLayoutFile),
}

impl GroundTruth {
    /// Tries the bench sidecar format first, then the layout format.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        match GroundTruthFile::load(path) {
            Ok(file) => Ok(Self::Bench { file, path: path.to_path_buf() }),
            Err(BenchError::Sidecar { .. }) => SceneLayoutFile::load(path).map(Self::Layout).map_err(|e| match e {
                PipelineError::Layout { path, message } => PipelineError::Layout {
                    path,
                    message: format!("neither a ground-truth sidecar nor a layout file ({message})"),
                },
                other => other,
            }),
            Err(e) => Err(e.into()),
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let all: Option<Vec<f64>> = values.collect();
    all.filter(|v| !v.is_empty()).map(|v| mean(v.into_iter()))
}

/// Compares each layout instance with the same-id ground-truth instance.
/// Both sides must cover the same ids (ground-truth instances with no
/// visible pixels are not expected in the layout).
pub fn evaluate_layout(layout: &SceneLayoutFile, gt: &GroundTruth, tol: &Tolerances) -> Result<MetricsReport, PipelineError> {
    let (ids, cam): (Vec<String>, PinholeIntrinsics<f64>) = match gt {
        GroundTruth::Bench { file, .. } => (
            file.instances.iter().filter(|i| i.visible_pixels > 0).map(|i| i.instance_id.clone()).collect(),
            file.camera,
        ),
        GroundTruth::Layout(l) => (l.instances.iter().map(|i| i.instance_id.clone()).collect(), l.camera),
    };
    let have: Vec<&str> = layout.instances.iter().map(|i| i.instance_id.as_str()).collect();
    let missing: Vec<String> = ids.iter().filter(|id| !have.contains(&id.as_str())).cloned().collect();
    let extra: Vec<String> = have.iter().filter(|id| !ids.iter().any(|g| g == *id)).map(|s| s.to_string()).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(PipelineError::InstanceMismatch { missing, extra });
    }

    let predicted = layout.placed_models()?;
    let (reference, recovery) = match gt {
        GroundTruth::Bench { file, path } => {
            let models = file.load_models(path)?;
            let placed: Vec<PointCloud<f64>> = models
                .iter()
                .zip(&file.instances)
                .map(|(m, i)| apply_transform(m, &i.primitive.pose))
                .collect::<Result<_, _>>()?;
            let truth: Vec<TruthRef<'_>> = file
                .instances
                .iter()
                .zip(&models)
                .map(|(i, m)| TruthRef { spec: &i.primitive, canonical: m, observed: i.visible_pixels > 0 })
                .collect();
            let recovered: Vec<Option<LayoutParams<f64>>> = file
                .instances
                .iter()
                .map(|g| layout.instances.iter().find(|l| l.instance_id == g.instance_id).map(|l| l.params))
                .collect();
            let report = evaluate_recovery_with(&truth, &recovered, file.scene_diagonal, tol);
            let by_id: Vec<PointCloud<f64>> = layout
                .instances
                .iter()
                .map(|l| {
                    let k = file.instances.iter().position(|g| g.instance_id == l.instance_id).expect("checked above");
                    placed[k].clone()
                })
                .collect();
            (by_id, Some(report))
        }
        GroundTruth::Layout(reference) => {
            let placed = reference.placed_models()?;
            let by_id = layout
                .instances
                .iter()
                .map(|l| {
                    let k = reference.instances.iter().position(|g| g.instance_id == l.instance_id).expect("checked above");
                    placed[k].clone()
                })
                .collect();
            (by_id, None)
        }
    };

    let instances = layout
        .instances
        .iter()
        .zip(predicted.iter().zip(&reference))
        .map(|(l, (p, r))| Ok(InstanceMetrics { instance_id: l.instance_id.clone(), metrics: cloud_metrics(p, r, &cam)? }))
        .collect::<Result<Vec<_>, GeometryError>>()?;
    Ok(MetricsReport {
        mean_cd_3d: mean(instances.iter().map(|i| i.metrics.cd_3d)),
        mean_cd_2d: mean_opt(instances.iter().map(|i| i.metrics.cd_2d)),
        mean_f_score_3d: mean(instances.iter().map(|i| i.metrics.f_score_3d)),
        mean_f_score_2d: mean_opt(instances.iter().map(|i| i.metrics.f_score_2d)),
        recovery,
        instances,
    })
}
