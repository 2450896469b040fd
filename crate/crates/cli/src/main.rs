//! `scenefit` command-line tool.
//!
//! Exit codes: 0 success, 1 input or validation failure, 2 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use scenefit::bench::{generate_scene, write_job, BenchConfig, Tolerances};
use scenefit::geometry::PointCloud;
use scenefit::ingest::{save_point_cloud, write_atomic};
use scenefit::optimize::{LossMode, LossWeights, OptimizerConfig};
use scenefit::pipeline::{
    evaluate_layout, fit_instance, prepare_scene, render_trace, select_instance, FitOptions, GroundTruth, InstanceFailure,
    PipelineError, PreparedScene, SceneLayoutFile, SelectionFile, DEFAULT_MAX_POINTS, TOOL_VERSION,
};

#[derive(Parser, Debug)]
#[command(name = "scenefit", version, about = "Model selection and layout optimization for object-level scene composition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score every candidate model per instance and pick the lowest Chamfer distance.
    Select {
        manifest: PathBuf,
        /// Output JSON report.
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Select models and optimize their layouts.
    #[command(allow_negative_numbers = true)]
    Optimize {
        manifest: PathBuf,
        out_dir: PathBuf,
        #[arg(long, default_value = "full")]
        mode: LossMode,
        /// Pick a seeded random candidate instead of running selection.
        #[arg(long)]
        no_selection: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 1.0)]
        lambda1: f64,
        #[arg(long, default_value_t = 0.05)]
        lambda2: f64,
        /// Worker threads; 0 uses every available core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Compare a layout with a ground-truth sidecar or another layout.
    Evaluate { layout: PathBuf, ground_truth: PathBuf },
    /// Render a synthetic scene job with a ground-truth sidecar.
    Synth {
        config: PathBuf,
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self { code: if e.is_numerical() { 2 } else { 1 }, message: e.to_string() }
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure { code: 2, message: format!("thread pool: {e}") })
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    write_atomic(path, text.as_bytes()).map_err(|e| Failure::input(e.to_string()))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

/// Instance ids are used as file names.
fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

fn report_failures(failures: &[InstanceFailure]) {
    for f in failures {
        eprintln!("instance {}: {}", f.instance_id, f.error);
    }
}

fn warn_if_empty(scene: &PreparedScene) {
    if scene.instances.is_empty() {
        eprintln!(
            "warning: no detection reaches confidence threshold {} ({} filtered out)",
            scene.manifest.confidence_threshold, scene.filtered_out
        );
    }
}

fn cmd_select(manifest: &Path, out: &Path, jobs: usize) -> Result<(), Failure> {
    let scene = prepare_scene(manifest)?;
    warn_if_empty(&scene);
    let results: Vec<_> = pool(jobs)?.install(|| {
        scene
            .instances
            .par_iter()
            .map(|inst| match inst {
                Ok(inst) => select_instance(inst).map_err(|e| InstanceFailure {
                    instance_id: inst.record.instance_id.clone(),
                    error: e.to_string(),
                    numerical: e.is_numerical(),
                }),
                Err(f) => Err(f.clone()),
            })
            .collect()
    });
    let mut file = SelectionFile {
        tool_version: TOOL_VERSION.to_string(),
        manifest: manifest.to_string_lossy().into_owned(),
        selections: Vec::new(),
        failures: Vec::new(),
    };
    for r in results {
        match r {
            Ok(s) => {
                let scores: Vec<String> =
                    s.scores.iter().map(|v| v.map_or_else(|| "degenerate".to_string(), |x| format!("{x:.6e}"))).collect();
                println!("{} ({}): chosen {} [{}]", s.instance_id, s.label, s.chosen, scores.join(", "));
                file.selections.push(s);
            }
            Err(f) => file.failures.push(f),
        }
    }
    let mut text = serde_json::to_string_pretty(&file).expect("serializable");
    text.push('\n');
    write_text(out, &text)?;
    if file.failures.is_empty() {
        Ok(())
    } else {
        report_failures(&file.failures);
        Err(Failure::input(format!("{} instance(s) failed", file.failures.len())))
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_optimize(
    manifest: &Path,
    out_dir: &Path,
    mode: LossMode,
    no_selection: bool,
    seed: u64,
    epochs: usize,
    lambda1: f64,
    lambda2: f64,
    jobs: usize,
) -> Result<(), Failure> {
    let weights = LossWeights::new(lambda1, lambda2).map_err(|e| Failure::input(e.to_string()))?;
    let config = OptimizerConfig { epochs, seed, mode, max_points: Some(DEFAULT_MAX_POINTS), ..OptimizerConfig::default() };
    config.validate().map_err(|e| Failure::input(e.to_string()))?;
    let opts = FitOptions { weights, config, selection: !no_selection };

    let scene = prepare_scene(manifest)?;
    warn_if_empty(&scene);
    let fits: Vec<_> = pool(jobs)?.install(|| {
        scene
            .instances
            .par_iter()
            .map(|inst| match inst {
                Ok(inst) => fit_instance(inst, &scene.cam, &opts).map_err(|e| InstanceFailure {
                    instance_id: inst.record.instance_id.clone(),
                    error: e.to_string(),
                    numerical: e.is_numerical(),
                }),
                Err(f) => Err(f.clone()),
            })
            .collect()
    });

    create_dir(&out_dir.join("traces"))?;
    create_dir(&out_dir.join("instances"))?;
    let mut layout = SceneLayoutFile::new(&scene, &opts, manifest);
    let mut placed: Vec<PointCloud<f64>> = Vec::new();
    for fit in fits {
        match fit {
            Ok(fit) => {
                let stem = file_stem(&fit.layout.instance_id);
                write_text(&out_dir.join("traces").join(format!("{stem}.csv")), &render_trace(&fit.trace))?;
                save_point_cloud(&fit.placed, &out_dir.join("instances").join(format!("{stem}.ply")))
                    .map_err(|e| Failure::input(e.to_string()))?;
                let p = &fit.layout.params;
                println!(
                    "{}: candidate {} t=({:.4}, {:.4}, {:.4}) s={:.4} loss={}",
                    fit.layout.instance_id,
                    fit.layout.chosen_candidate,
                    p.translation[0],
                    p.translation[1],
                    p.translation[2],
                    p.scale,
                    fit.layout.total.map_or_else(|| "n/a".to_string(), |l| format!("{l:.6e}"))
                );
                placed.push(fit.placed);
                layout.instances.push(fit.layout);
            }
            Err(f) => layout.failures.push(f),
        }
    }
    if !placed.is_empty() {
        save_point_cloud(&PointCloud::concat(&placed), &out_dir.join("scene.ply")).map_err(|e| Failure::input(e.to_string()))?;
    }
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    write_text(&out_dir.join("layout.json"), &layout.render(&stamp.to_string()))?;

    report_failures(&layout.failures);
    if layout.instances.is_empty() && !layout.failures.is_empty() {
        let code = if layout.failures.iter().all(|f| f.numerical) { 2 } else { 1 };
        return Err(Failure { code, message: "every instance failed".into() });
    }
    Ok(())
}

fn cmd_evaluate(layout: &Path, ground_truth: &Path) -> Result<(), Failure> {
    let layout = SceneLayoutFile::load(layout)?;
    let gt = GroundTruth::load(ground_truth)?;
    let report = evaluate_layout(&layout, &gt, &Tolerances::default())?;
    print!("{}", report.render_text());
    Ok(())
}

fn cmd_synth(config: &Path, out_dir: &Path, seed: u64) -> Result<(), Failure> {
    let text = std::fs::read_to_string(config).map_err(|e| Failure::input(format!("{}: {e}", config.display())))?;
    let config: BenchConfig =
        serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: invalid bench config: {e}", config.display())))?;
    config.validate().map_err(|e| Failure::input(e.to_string()))?;
    let scene = generate_scene(&config, seed).map_err(|e| Failure::input(e.to_string()))?;
    create_dir(out_dir)?;
    let manifest = write_job(&scene, &config, seed, out_dir).map_err(|e| Failure::input(e.to_string()))?;
    println!("{}", manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    // Usage errors share the input-failure code.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Select { manifest, out, jobs } => cmd_select(manifest, out, *jobs),
        Command::Optimize { manifest, out_dir, mode, no_selection, seed, epochs, lambda1, lambda2, jobs } => {
            cmd_optimize(manifest, out_dir, *mode, *no_selection, *seed, *epochs, *lambda1, *lambda2, *jobs)
        }
        Command::Evaluate { layout, ground_truth } => cmd_evaluate(layout, ground_truth),
        Command::Synth { config, out_dir, seed } => cmd_synth(config, out_dir, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
