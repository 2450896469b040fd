//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test --release -p scenefit-cli --test acceptance -- --full` runs
//! all nine. Without `--full`, the two long optimization studies (4 and 6,
//! each 50 scenes at 20 x 2000 iterations per instance) are reported as SKIP.
//! `--only 1,4` restricts the run to the listed criteria.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use scenefit::bench::{
    evaluate_recovery, generate_scene, make_candidates, BenchConfig, CameraConfig, GeometryOutput, GroundTruthFile, PrimitiveSpec,
    Shape, SyntheticScene, Tolerances, GROUND_TRUTH_FILE, MANIFEST_FILE,
};
use scenefit::camera::{backproject_depth, estimate_focal, PinholeIntrinsics};
use scenefit::derive_seed;
use scenefit::geometry::{apply_transform, chamfer_distance, f_score, EulerRotation, LayoutParams, PointCloud};
use scenefit::ingest::{extract_instance_cloud, filter_detections, load_manifest, load_mask, load_scene_geometry};
use scenefit::optimize::{loss_gradient, loss_total, optimize_layout, LossMode, LossWeights, OptimizerConfig, Phase};
use scenefit::pipeline::{evaluate_layout, GroundTruth, LayoutInstance, SceneLayoutFile, TOOL_VERSION};
use scenefit::selection::{select_model, selection_ablation_passthrough, CandidateSet};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// ---------------------------------------------------------------- oracles

fn d2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    (0..D).map(|k| (a[k] - b[k]).powi(2)).sum()
}

fn brute_directed(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    from.iter().map(|p| to.iter().map(|q| d2(p, q)).fold(f64::INFINITY, f64::min)).sum::<f64>() / from.len() as f64
}

fn brute_chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    brute_directed(a, b) + brute_directed(b, a)
}

/// Centroid-centred, divided by the largest bounding-box side.
fn brute_normalize(pts: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let n = pts.len() as f64;
    let c = [0, 1, 2].map(|k| pts.iter().map(|p| p[k]).sum::<f64>() / n);
    let ext = [0, 1, 2]
        .map(|k| pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max) - pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min));
    let s = ext[0].max(ext[1]).max(ext[2]);
    pts.iter().map(|p| [0, 1, 2].map(|k| (p[k] - c[k]) / s)).collect()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

// ------------------------------------------------------------ criterion 1

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    let scale = 10f64.powf(rng.random_range(-2.0..2.0));
    let offset = [0; 3].map(|_| rng.random_range(-5.0..5.0));
    if rng.random_bool(0.2) {
        // Coarse lattice with duplicates: many exact ties.
        (0..n).map(|_| [0; 3].map(|k| offset[k] + scale * rng.random_range(0..4) as f64)).collect()
    } else {
        (0..n).map(|_| [0; 3].map(|k| offset[k] + scale * rng.random_range(-1.0..1.0))).collect()
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut bad = 0;
    for _ in 0..200 {
        let (n, m) = (rng.random_range(1..=1024), rng.random_range(1..=1024));
        let a = random_cloud(&mut rng, n);
        let b = random_cloud(&mut rng, m);
        let fast = chamfer_distance(&PointCloud::new(a.clone()).unwrap(), &PointCloud::new(b.clone()).unwrap()).unwrap();
        let slow = brute_chamfer(&a, &b);
        let rel = if slow == 0.0 { fast.abs() } else { (fast - slow).abs() / slow.abs() };
        worst = worst.max(rel);
        if rel > 1e-9 {
            bad += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(bad == 0 && secs < 30.0, format!("200 pairs, worst relative error {worst:.2e}, {secs:.1} s (limit 30 s)"))
}

// ------------------------------------------------------------ criterion 2

type M3 = [[f64; 3]; 3];

fn mul(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn place(model: &[[f64; 3]], v: &[f64; 7]) -> Vec<[f64; 3]> {
    let (sx, cx) = v[3].sin_cos();
    let (sy, cy) = v[4].sin_cos();
    let (sz, cz) = v[5].sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    let r = mul(&rz, &mul(&ry, &rx));
    model.iter().map(|p| [0, 1, 2].map(|i| v[6] * (r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2]) + v[i])).collect()
}

fn nn<const D: usize>(q: &[f64; D], set: &[[f64; D]]) -> usize {
    (0..set.len()).fold(0, |best, i| if d2(q, &set[i]) < d2(q, &set[best]) { i } else { best })
}

struct GradientDraw {
    model: Vec<[f64; 3]>,
    target: Vec<[f64; 3]>,
    v: [f64; 7],
    cam: (f64, f64, f64),
    pairs: [Vec<usize>; 4],
}

impl GradientDraw {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let model: Vec<[f64; 3]> = (0..rng.random_range(5..80)).map(|_| [0; 3].map(|_| rng.random_range(-0.3..0.3))).collect();
        let target: Vec<[f64; 3]> = (0..rng.random_range(5..80))
            .map(|_| [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(2.5..3.5)])
            .collect();
        let v = [
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
            rng.random_range(2.6..3.4),
            rng.random_range(-3.0..3.0),
            rng.random_range(-1.4..1.4),
            rng.random_range(-3.0..3.0),
            rng.random_range(0.5..1.8),
        ];
        let cam = (rng.random_range(100.0..400.0), rng.random_range(40.0..90.0), rng.random_range(30.0..70.0));
        let mut d = Self { model, target, v, cam, pairs: Default::default() };
        let placed = place(&d.model, &v);
        let (mp, tp) = (d.project(&placed), d.project(&d.target));
        d.pairs = [
            placed.iter().map(|p| nn(p, &d.target)).collect(),
            d.target.iter().map(|q| nn(q, &placed)).collect(),
            mp.iter().map(|p| nn(p, &tp)).collect(),
            tp.iter().map(|q| nn(q, &mp)).collect(),
        ];
        d
    }

    fn project(&self, pts: &[[f64; 3]]) -> Vec<[f64; 2]> {
        let (f, cx, cy) = self.cam;
        pts.iter().map(|p| [f * p[0] / p[2] + cx, f * p[1] / p[2] + cy]).collect()
    }

    /// Loss with every pairing frozen at the draw's parameters.
    fn surrogate(&self, v: &[f64; 7], w3: f64, w2: f64) -> f64 {
        let placed = place(&self.model, v);
        let (n, m) = (placed.len() as f64, self.target.len() as f64);
        let [f3, b3, f2, b2] = &self.pairs;
        let l3 = f3.iter().enumerate().map(|(i, &j)| d2(&placed[i], &self.target[j])).sum::<f64>() / n
            + b3.iter().enumerate().map(|(j, &i)| d2(&placed[i], &self.target[j])).sum::<f64>() / m;
        let (mp, tp) = (self.project(&placed), self.project(&self.target));
        let l2 = f2.iter().enumerate().map(|(i, &j)| d2(&mp[i], &tp[j])).sum::<f64>() / n
            + b2.iter().enumerate().map(|(j, &i)| d2(&mp[i], &tp[j])).sum::<f64>() / m;
        w3 * l3 + w2 * l2
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let weights = LossWeights::new(1.0, 0.05).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = Vec::new();
    let mut checked = 0;
    for (phase, w3, w2) in [(Phase::Spatial, 1.0, 0.0), (Phase::Joint, 1.0, 0.05)] {
        for draw_index in 0..100 {
            let d = GradientDraw::new(&mut rng);
            let cam = PinholeIntrinsics::new(d.cam.0, d.cam.1, d.cam.2, 128, 96).unwrap();
            let model = PointCloud::new(d.model.clone()).unwrap();
            let target = PointCloud::new(d.target.clone()).unwrap();
            let v = d.v;
            let params = LayoutParams::new([v[0], v[1], v[2]], EulerRotation::new(v[3], v[4], v[5]), v[6]).unwrap();
            let g = loss_gradient(&model, &target, &params, &cam, &weights, phase).unwrap();
            let value = loss_total(&model, &target, &params, &cam, &weights, phase).unwrap().total;
            if !rel_close(value, d.surrogate(&v, w3, w2), 1e-9) {
                failures.push(format!("{phase:?} draw {draw_index}: loss value"));
            }
            let h = 1e-5;
            for k in 0..7 {
                let (mut up, mut down) = (v, v);
                up[k] += h;
                down[k] -= h;
                let fd = (d.surrogate(&up, w3, w2) - d.surrogate(&down, w3, w2)) / (2.0 * h);
                let err = (g[k] - fd).abs();
                checked += 1;
                if err > 1e-7 && err > 1e-4 * g[k].abs().max(fd.abs()) {
                    failures.push(format!("{phase:?} draw {draw_index} component {k}: {} vs {fd}", g[k]));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("{checked} partials over 2 x 100 draws, {} mismatches, {secs:.1} s (limit 120 s)", failures.len());
    let detail = match failures.first() {
        Some(f) => format!("{detail}; first: {f}"),
        None => detail,
    };
    outcome(failures.is_empty() && secs < 120.0, detail)
}

// ------------------------------------------------------------ criterion 3

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.001).unwrap();
    let (mut worst_clean, mut worst_noisy) = (0.0f64, 0.0f64);
    for s in 0..20u64 {
        let (w, h) = [(160, 120), (200, 150), (128, 128), (240, 160)][s as usize % 4];
        let focal = rng.random_range(150.0..400.0);
        let config = BenchConfig { camera: CameraConfig { focal, width: w, height: h }, ..BenchConfig::default() };
        let scene = generate_scene(&config, 300 + s).unwrap();
        let mut pm = backproject_depth(&scene.depth, &scene.cam).unwrap();
        worst_clean = worst_clean.max((estimate_focal(&pm).unwrap().focal - focal).abs() / focal);
        for (p, ok) in pm.points.iter_mut().zip(&pm.valid) {
            if *ok {
                for c in p.iter_mut() {
                    *c += noise.sample(&mut rng);
                }
            }
        }
        worst_noisy = worst_noisy.max((estimate_focal(&pm).unwrap().focal - focal).abs() / focal);
    }
    outcome(
        worst_clean < 1e-6 && worst_noisy < 0.01,
        format!("20 scenes, worst relative error {worst_clean:.2e} noise-free (limit 1e-6), {worst_noisy:.2e} at sigma 0.001 (limit 1e-2)"),
    )
}

// ------------------------------------------------------------ criterion 5

fn random_spec(rng: &mut ChaCha8Rng) -> PrimitiveSpec {
    let shape = match rng.random_range(0..3) {
        0 => Shape::Sphere,
        1 => Shape::Box { extents: [1.0, rng.random_range(0.5..0.85), rng.random_range(0.2..0.45)] },
        _ => Shape::LBracket {
            long_leg: 1.0,
            short_leg: rng.random_range(0.5..0.75),
            thickness: rng.random_range(0.2..0.3),
            depth: rng.random_range(0.3..0.5),
        },
    };
    PrimitiveSpec::new(shape, rng.random_range(0.2..2.0), LayoutParams::identity(), rng.random_range(256..1024))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut correct, mut score_mismatch, mut worst) = (0, 0, 0.0f64);
    for trial in 0..100u64 {
        let spec = random_spec(&mut rng);
        let set = make_candidates(&spec, 5, derive_seed(5, trial)).unwrap();
        // Shuffle so the correct candidate is not always first.
        let mut order: Vec<usize> = (0..5).collect();
        order.shuffle(&mut rng);
        let clouds: Vec<PointCloud<f64>> = order.iter().map(|&k| set.candidates[k].1.clone()).collect();
        let shuffled = CandidateSet::new(format!("trial_{trial}"), clouds.clone(), 5).unwrap();
        let truth_slot = order.iter().position(|&k| k == 0).unwrap();

        // Target: the correct shape resampled, then shifted and scaled.
        let resampled = scenefit::bench::sample_surface(&spec, spec.point_budget, derive_seed(55, trial));
        let pose = LayoutParams::new(
            [0; 3].map(|_| rng.random_range(-3.0..3.0)),
            EulerRotation::identity(),
            rng.random_range(0.3..3.0),
        )
        .unwrap();
        let target = apply_transform(&resampled, &pose).unwrap();

        let report = select_model(&shuffled, &target).unwrap();
        if report.chosen == truth_slot {
            correct += 1;
        }
        let nt = brute_normalize(target.points());
        for (cloud, score) in clouds.iter().zip(report.scores.unwrap()) {
            let oracle = brute_chamfer(&brute_normalize(cloud.points()), &nt);
            let rel = (score - oracle).abs() / oracle.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
            if rel > 1e-9 {
                score_mismatch += 1;
            }
        }
    }
    outcome(
        correct >= 98 && score_mismatch == 0,
        format!("{correct}/100 correct (need 98), worst score error vs brute force {worst:.2e} (limit 1e-9)"),
    )
}

// ------------------------------------------------------------ criterion 7

fn criterion_7(root: &Path) -> Outcome {
    let (mut instances, mut perfect) = (0, 0);
    for seed in 0..20u64 {
        let dir = root.join(format!("c7_{seed}"));
        let config = BenchConfig { geometry: if seed % 2 == 0 { GeometryOutput::Depth } else { GeometryOutput::Pointmap }, ..BenchConfig::default() };
        let scene = generate_scene(&config, 700 + seed).unwrap();
        let manifest = scenefit::bench::write_job(&scene, &config, 700 + seed, &dir).unwrap();
        let gt_path = dir.join(GROUND_TRUTH_FILE);
        let gt = GroundTruthFile::load(&gt_path).unwrap();
        let layout = SceneLayoutFile {
            tool_version: TOOL_VERSION.into(),
            seed,
            manifest: manifest.to_string_lossy().into_owned(),
            camera: gt.camera,
            focal_estimated: false,
            mode: LossMode::Full,
            selection: true,
            weights: LossWeights::default(),
            epochs: 0,
            iters_per_epoch: 0,
            phase1_iters: 0,
            instances: gt
                .instances
                .iter()
                .filter(|g| g.visible_pixels > 0)
                .map(|g| LayoutInstance {
                    instance_id: g.instance_id.clone(),
                    label: g.primitive.label.clone(),
                    chosen_candidate: 0,
                    candidate_path: g.model_path.clone(),
                    selection_scores: None,
                    params: g.primitive.pose,
                    loss3d: None,
                    loss2d: None,
                    total: None,
                    f_score_3d: None,
                    f_score_2d: None,
                    chosen_epoch: 0,
                })
                .collect(),
            failures: vec![],
        };
        let report = evaluate_layout(&layout, &GroundTruth::load(&gt_path).unwrap(), &Tolerances::default()).unwrap();
        for i in &report.instances {
            instances += 1;
            if i.metrics.f_score_3d == 100.0 && i.metrics.f_score_2d == Some(100.0) {
                perfect += 1;
            }
        }
    }
    outcome(
        perfect == instances && instances > 0,
        format!("{perfect}/{instances} ground-truth instances score F(3D, 0.01) = F(2D, 1.00) = 100 over 20 jobs"),
    )
}

// ------------------------------------------------------------ criterion 8

fn scenefit_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_scenefit")).args(args).output().expect("binary runs")
}

fn criterion_8(root: &Path) -> Outcome {
    let config = root.join("c8.json");
    std::fs::write(&config, serde_json::to_string(&BenchConfig::default()).unwrap()).unwrap();
    let job = root.join("c8_job");
    let out = scenefit_cli(&["synth", config.to_str().unwrap(), job.to_str().unwrap(), "--seed", "88"]);
    if !out.status.success() {
        return outcome(false, format!("synth failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let manifest = job.join(MANIFEST_FILE);
    let runs: Vec<_> = ["c8_a", "c8_b"].iter().map(|d| root.join(d)).collect();
    for dir in &runs {
        let out = scenefit_cli(&["optimize", manifest.to_str().unwrap(), dir.to_str().unwrap(), "--seed", "8"]);
        if !out.status.success() {
            return outcome(false, format!("optimize failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    let strip = |p: &Path| {
        let text = std::fs::read_to_string(p.join("layout.json")).unwrap();
        text.split_once('\n').map(|(h, rest)| (h.starts_with("# generated "), rest.to_string())).unwrap()
    };
    let (ha, a) = strip(&runs[0]);
    let (hb, b) = strip(&runs[1]);
    let layout = SceneLayoutFile::load(&runs[0].join("layout.json")).unwrap();
    let mut traces_equal = true;
    for inst in &layout.instances {
        let rel = format!("traces/{}.csv", inst.instance_id);
        traces_equal &= std::fs::read(runs[0].join(&rel)).unwrap() == std::fs::read(runs[1].join(&rel)).unwrap();
    }
    outcome(
        ha && hb && a == b && traces_equal && !layout.instances.is_empty(),
        format!(
            "{} instances at 20 x 2000: layout body identical = {}, traces identical = {traces_equal}",
            layout.instances.len(),
            a == b
        ),
    )
}

// ------------------------------------------------------------ criterion 9

fn criterion_9(root: &Path) -> Outcome {
    let (mut checked, mut worst, mut errors) = (0usize, 0.0f64, Vec::new());
    for seed in 0..10u64 {
        let config = BenchConfig { geometry: if seed % 2 == 0 { GeometryOutput::Depth } else { GeometryOutput::Pointmap }, ..BenchConfig::default() };
        let cfg_path = root.join(format!("c9_{seed}.json"));
        std::fs::write(&cfg_path, serde_json::to_string(&config).unwrap()).unwrap();
        let job = root.join(format!("c9_job_{seed}"));
        let out = scenefit_cli(&["synth", cfg_path.to_str().unwrap(), job.to_str().unwrap(), "--seed", &(900 + seed).to_string()]);
        if !out.status.success() {
            errors.push(format!("synth seed {seed}: {}", String::from_utf8_lossy(&out.stderr)));
            continue;
        }
        let result = (|| -> Result<(), String> {
            let manifest = load_manifest(&job.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
            let (pm, _, _) = load_scene_geometry(&manifest).map_err(|e| e.to_string())?;
            let gt = GroundTruthFile::load(&job.join(GROUND_TRUTH_FILE)).map_err(|e| e.to_string())?;
            gt.load_models(&job.join(GROUND_TRUTH_FILE)).map_err(|e| e.to_string())?;
            for rec in filter_detections(&manifest) {
                for c in &rec.candidate_paths {
                    scenefit::ingest::load_point_cloud::<f64>(c).map_err(|e| e.to_string())?;
                }
                let mask = load_mask(&rec.mask_path).map_err(|e| e.to_string())?;
                let cloud = extract_instance_cloud(&pm, &mask).map_err(|e| e.to_string())?;
                let truth = gt.instances.iter().find(|g| g.instance_id == rec.instance_id).ok_or("unknown instance")?;
                for p in cloud.iter() {
                    worst = worst.max(truth.primitive.posed_surface_distance(p));
                    checked += 1;
                }
            }
            Ok(())
        })();
        if let Err(e) = result {
            errors.push(format!("seed {seed}: {e}"));
        }
    }
    outcome(
        errors.is_empty() && worst < 1e-6,
        format!(
            "10 jobs, {} load errors, {checked} masked points, worst surface distance {worst:.2e} (limit 1e-6){}",
            errors.len(),
            errors.first().map(|e| format!("; {e}")).unwrap_or_default()
        ),
    )
}

// ------------------------------------------------------ criteria 4 and 6

const SUITE_SCENES: u64 = 50;
const SUITE_SEED: u64 = 0x5eed;

struct SuiteScene {
    seed: u64,
    scene: SyntheticScene,
    targets: Vec<Option<PointCloud<f64>>>,
}

fn suite() -> Vec<SuiteScene> {
    (0..SUITE_SCENES)
        .map(|k| {
            let seed = derive_seed(SUITE_SEED, k);
            let scene = generate_scene(&BenchConfig::default(), seed).unwrap();
            let pm = backproject_depth(&scene.depth, &scene.cam).unwrap();
            let targets = scene.masks.iter().map(|m| extract_instance_cloud(&pm, m).ok()).collect();
            SuiteScene { seed, scene, targets }
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
struct RunKey {
    scene: usize,
    instance: usize,
    candidate: usize,
    mode: LossMode,
}

#[derive(Clone, Debug)]
struct Run {
    params: Option<LayoutParams<f64>>,
    loss: Option<f64>,
    elapsed: Duration,
}

/// Paper-default optimization runs, memoized across criteria.
struct Runner<'a> {
    suite: &'a [SuiteScene],
    cache: Mutex<HashMap<RunKey, Run>>,
}

impl Runner<'_> {
    fn candidates(&self, s: usize, i: usize) -> CandidateSet<f64> {
        let sc = &self.suite[s].scene;
        make_candidates(&sc.primitives[i], 5, sc.sample_seeds[i]).unwrap()
    }

    fn run_all(&self, keys: &[RunKey]) {
        let todo: Vec<RunKey> = {
            let cache = self.cache.lock().unwrap();
            let mut seen = std::collections::HashSet::new();
            keys.iter().filter(|k| !cache.contains_key(k) && seen.insert(**k)).copied().collect()
        };
        let results: Vec<(RunKey, Run)> = todo.par_iter().map(|k| (*k, self.run_one(k))).collect();
        self.cache.lock().unwrap().extend(results);
    }

    fn run_one(&self, key: &RunKey) -> Run {
        let ss = &self.suite[key.scene];
        let target = ss.targets[key.instance].as_ref().expect("observed instance");
        let set = self.candidates(key.scene, key.instance);
        let model = set.get(key.candidate).unwrap();
        let config = OptimizerConfig { seed: derive_seed(ss.seed, key.instance as u64), mode: key.mode, ..OptimizerConfig::default() };
        let start = Instant::now();
        let result = optimize_layout(model, target, &ss.scene.cam, &LossWeights::default(), &config);
        Run {
            params: result.as_ref().ok().map(|(p, _)| *p),
            loss: result.ok().and_then(|(_, t)| t.chosen().loss),
            elapsed: start.elapsed(),
        }
    }

    fn get(&self, key: &RunKey) -> Run {
        self.cache.lock().unwrap()[key].clone()
    }
}

fn observed(suite: &[SuiteScene]) -> Vec<(usize, usize)> {
    suite
        .iter()
        .enumerate()
        .flat_map(|(s, ss)| (0..ss.scene.primitives.len()).filter(move |&i| ss.targets[i].is_some()).map(move |i| (s, i)))
        .collect()
}

fn criterion_4(runner: &Runner) -> Outcome {
    let asym: Vec<(usize, usize)> = observed(runner.suite)
        .into_iter()
        .filter(|&(s, i)| runner.suite[s].scene.primitives[i].shape.rotational_symmetries().is_some())
        .collect();
    let keys: Vec<RunKey> = asym.iter().map(|&(scene, instance)| RunKey { scene, instance, candidate: 0, mode: LossMode::Full }).collect();
    let start = Instant::now();
    runner.run_all(&keys);
    let wall = start.elapsed().as_secs_f64();
    let cpu: f64 = keys.iter().map(|k| runner.get(k).elapsed.as_secs_f64()).sum();

    let (mut evaluated, mut succeeded) = (0, 0);
    let mut reasons: HashMap<String, usize> = HashMap::new();
    let mut scale_errors = Vec::new();
    let (mut failing, mut below_truth) = (0, 0);
    for (s, ss) in runner.suite.iter().enumerate() {
        let recovered: Vec<Option<LayoutParams<f64>>> = (0..ss.scene.primitives.len())
            .map(|i| keys.iter().find(|k| k.scene == s && k.instance == i).and_then(|k| runner.get(k).params))
            .collect();
        let report = evaluate_recovery(&ss.scene, &recovered, &Tolerances::default());
        for inst in report.instances.iter().filter(|r| !r.symmetric) {
            evaluated += 1;
            if inst.success {
                succeeded += 1;
                continue;
            }
            *reasons.entry(inst.reason.clone().unwrap_or_default()).or_default() += 1;
            if let Some(e) = inst.scale_rel_error {
                scale_errors.push(e);
            }
            // Compare the reached loss with the loss of the true pose.
            let key = RunKey { scene: s, instance: inst.index, candidate: 0, mode: LossMode::Full };
            let model = &ss.scene.canonical_clouds[inst.index];
            let target = ss.targets[inst.index].as_ref().unwrap();
            let truth = loss_total(model, target, &ss.scene.primitives[inst.index].pose, &ss.scene.cam, &LossWeights::default(), Phase::Joint);
            if let (Some(reached), Ok(t)) = (runner.get(&key).loss, truth) {
                failing += 1;
                if reached < t.total {
                    below_truth += 1;
                }
            }
        }
    }
    let rate = if evaluated == 0 { 0.0 } else { succeeded as f64 / evaluated as f64 };
    scale_errors.sort_by(f64::total_cmp);
    let median_scale = scale_errors.get(scale_errors.len() / 2).copied().unwrap_or(0.0);
    let mut reasons: Vec<_> = reasons.into_iter().collect();
    reasons.sort();
    let within_budget = wall < 1800.0;
    outcome(
        rate >= 0.9 && within_budget,
        format!(
            "{succeeded}/{evaluated} non-symmetric instances recovered ({:.1}%, need 90%); wall {:.0} s, summed {:.0} s (limit 1800 s); \
             failures by reason {reasons:?}; median relative scale error of failures {median_scale:.3}; \
             {below_truth}/{failing} failures reached a lower loss than the true pose",
            100.0 * rate,
            wall,
            cpu
        ),
    )
}

fn criterion_6(runner: &Runner) -> Outcome {
    let inst = observed(runner.suite);
    let chosen: Vec<usize> = inst
        .iter()
        .map(|&(s, i)| select_model(&runner.candidates(s, i), runner.suite[s].targets[i].as_ref().unwrap()).unwrap().chosen)
        .collect();
    let random: Vec<usize> = inst
        .iter()
        .map(|&(s, i)| selection_ablation_passthrough(&runner.candidates(s, i), derive_seed(runner.suite[s].seed, 0x5e1 + i as u64)).chosen)
        .collect();
    let variants: [(&str, LossMode, bool); 4] = [
        ("full", LossMode::Full, true),
        ("w/o 3D (only2d)", LossMode::Only2d, true),
        ("w/o 2D (only3d)", LossMode::Only3d, true),
        ("w/o selection", LossMode::Full, false),
    ];
    let key = |k: usize, mode: LossMode, sel: bool| RunKey {
        scene: inst[k].0,
        instance: inst[k].1,
        candidate: if sel { chosen[k] } else { random[k] },
        mode,
    };
    let keys: Vec<RunKey> =
        variants.iter().flat_map(|&(_, mode, sel)| (0..inst.len()).map(move |k| key(k, mode, sel))).collect();
    let start = Instant::now();
    runner.run_all(&keys);
    let wall = start.elapsed().as_secs_f64();

    let mut means = Vec::new();
    for &(name, mode, sel) in &variants {
        let (mut cd, mut fs) = (0.0, 0.0);
        for k in 0..inst.len() {
            let (s, i) = inst[k];
            let sc = &runner.suite[s].scene;
            let gt = apply_transform(&sc.canonical_clouds[i], &sc.primitives[i].pose).unwrap();
            let rk = key(k, mode, sel);
            let model = runner.candidates(s, i).get(rk.candidate).unwrap().clone();
            // A failed run leaves the model at its canonical pose.
            let params = runner.get(&rk).params.unwrap_or_else(LayoutParams::identity);
            let pred = apply_transform(&model, &params).unwrap();
            cd += chamfer_distance(&pred, &gt).unwrap();
            fs += f_score(&pred, &gt, 0.01).unwrap();
        }
        let n = inst.len() as f64;
        means.push((name, cd / n, fs / n));
    }
    let (_, full_cd, full_f) = means[0];
    let pass = means[1..].iter().all(|&(_, cd, f)| full_cd < cd && full_f > f);
    let correct = chosen.iter().filter(|&&c| c == 0).count();
    let table: Vec<String> = means.iter().map(|(n, cd, f)| format!("{n}: CD {cd:.5} F {f:.2}")).collect();
    outcome(
        pass,
        format!(
            "{} instances; {}; selection picked the true model {correct}/{}; {wall:.0} s",
            inst.len(),
            table.join(", "),
            inst.len()
        ),
    )
}

// ------------------------------------------------------------------- main

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let full = args.iter().any(|a| a == "--full");
    let only: Option<Vec<u32>> = args
        .iter()
        .position(|a| a == "--only")
        .and_then(|i| args.get(i + 1))
        .map(|list| list.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |c: u32| only.as_ref().is_none_or(|o| o.contains(&c));

    let root = tempfile::tempdir().unwrap();
    let mut all_pass = true;
    let mut report = |id: u32, name: &str, o: Outcome| {
        all_pass &= o.pass;
        println!("{} {id} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    let skip = |id: u32, name: &str| println!("SKIP {id} {name}: long optimization study; rerun with --full");

    if wanted(1) {
        report(1, "chamfer oracle equivalence", criterion_1());
    }
    if wanted(2) {
        report(2, "gradient correctness", criterion_2());
    }
    if wanted(3) {
        report(3, "focal recovery", criterion_3());
    }
    let long = wanted(4) || wanted(6);
    let suite = if full && long { suite() } else { Vec::new() };
    let runner = Runner { suite: &suite, cache: Mutex::new(HashMap::new()) };
    if wanted(4) {
        if full {
            report(4, "layout recovery", criterion_4(&runner));
        } else {
            skip(4, "layout recovery");
        }
    }
    if wanted(5) {
        report(5, "model selection", criterion_5());
    }
    if wanted(6) {
        if full {
            report(6, "ablation trends", criterion_6(&runner));
        } else {
            skip(6, "ablation trends");
        }
    }
    if wanted(7) {
        report(7, "metrics self-consistency", criterion_7(root.path()));
    }
    if wanted(8) {
        report(8, "determinism", criterion_8(root.path()));
    }
    if wanted(9) {
        report(9, "end-to-end fixture integrity", criterion_9(root.path()));
    }
    if !all_pass {
        std::process::exit(1);
    }
}
