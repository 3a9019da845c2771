use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use worldsheet::{build_mesh, fit_scene, FitConfig};
use worldsheet_harness::error::{HarnessError, Result};
use worldsheet_harness::gradcheck::{pipeline_gradcheck, SuiteOptions};
use worldsheet_harness::io::{self, FitFile};
use worldsheet_harness::{gen_scene, render_trajectory, MetricsReport, SceneSpec, TrajectorySpec};

/// Fit, render and evaluate single-image sheet meshes.
#[derive(Debug, Parser)]
#[command(name = "worldsheet", version)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a sheet to a scene and write the result as JSON.
    Fit {
        #[arg(long)]
        scene: PathBuf,
        /// Fitting configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV loss trace.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Render numbered frames along a trajectory.
    Render {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print PSNR/SSIM of a prediction as JSON.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Visible-region mask; all pixels count as visible without it.
        #[arg(long)]
        vis_mask: Option<PathBuf>,
    },
    /// Run the full-pipeline gradient oracle.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        coordinates: usize,
        /// Minimum fraction of coordinates within tolerance.
        #[arg(long, default_value_t = 0.95)]
        min_fraction: f64,
    },
    /// Generate a bundled synthetic scene.
    GenScene {
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the fitted sheet as a Wavefront OBJ mesh.
    ExportMesh {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| HarnessError::io(path, e))
}

fn fit(scene: &Path, config: Option<&Path>, out: &Path, trace: Option<&Path>) -> Result<()> {
    let loaded = io::load_scene(scene)?;
    let config: FitConfig = match config {
        Some(p) => io::read_json(p)?,
        None => FitConfig::default(),
    };
    let result = fit_scene(&loaded.sample, &config)?;
    let fit = FitFile {
        input_image: absolute(&loaded.input_image_path)?,
        input_pose: loaded.sample.input_pose,
        intrinsics: loaded.sample.intrinsics,
        params: result.params.clone(),
        render: config.render.resolved_for(&loaded.sample.input_image),
        iterations: config.iterations,
        best_iteration: result.best_iteration,
        best_loss: result.best_loss,
        initial_loss: result.initial_loss(),
        adam_faults: result.faults,
    };
    io::write_json(out, &fit)?;
    if let Some(t) = trace {
        io::write_trace(t, &result.trace)?;
    }
    println!(
        "best loss {:.6} at iteration {} (initial {:.6})",
        result.best_loss,
        result.best_iteration,
        result.initial_loss()
    );
    Ok(())
}

fn render(fit_path: &Path, traj: &Path, out: &Path) -> Result<()> {
    let (fit, image) = FitFile::load(fit_path)?;
    let trajectory: TrajectorySpec = io::read_json(traj)?;
    let frames = render_trajectory(&fit.params, &image, &fit.intrinsics, &fit.input_pose, &fit.render, &trajectory, out)?;
    println!("wrote {} frames to {}", frames.len(), out.display());
    Ok(())
}

fn eval(pred: &Path, target: &Path, vis_mask: Option<&Path>) -> Result<()> {
    let pred = io::read_image(pred)?;
    let target = io::read_image(target)?;
    let mask = match vis_mask {
        Some(p) => {
            let (w, h, m) = io::read_mask(p)?;
            if (w, h) != (pred.width, pred.height) {
                return Err(HarnessError::Invalid(format!("mask is {w}x{h}, images are {}x{}", pred.width, pred.height)));
            }
            Some(m)
        }
        None => None,
    };
    let report = MetricsReport::compute(&pred, &target, mask.as_deref())?;
    println!("{}", serde_json::to_string_pretty(&report).expect("metrics serialize"));
    Ok(())
}

fn gradcheck(seed: u64, coordinates: usize, min_fraction: f64) -> Result<()> {
    let report = pipeline_gradcheck(&SuiteOptions { seed, coordinates, ..Default::default() })?;
    print!("{}", report.summary_table());
    let frac = report.fraction_within();
    println!(
        "{} of {} coordinates within relative error {} ({:.1}%)",
        report.within_tolerance(),
        report.checked(),
        report.tolerance,
        100.0 * frac
    );
    if report.checked() < coordinates || frac < min_fraction {
        return Err(HarnessError::Check(format!(
            "{} of {} stable coordinates agree; need {:.0}% of {coordinates}",
            report.within_tolerance(),
            report.checked(),
            100.0 * min_fraction
        )));
    }
    Ok(())
}

fn gen(preset: &str, seed: u64, size: usize, out: &Path) -> Result<()> {
    let scene = gen_scene(&SceneSpec::preset(preset, seed, size)?)?;
    let path = io::write_generated(out, &scene)?;
    println!("{}", path.display());
    Ok(())
}

fn export_mesh(fit_path: &Path, out: &Path) -> Result<()> {
    let (fit, _) = FitFile::load(fit_path)?;
    let mesh = build_mesh(&fit.params, &fit.intrinsics)?;
    std::fs::write(out, mesh.to_obj()).map_err(|e| HarnessError::io(out, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { scene, config, out, trace } => fit(&scene, config.as_deref(), &out, trace.as_deref()),
        Command::Render { fit, traj, out } => render(&fit, &traj, &out),
        Command::Eval { pred, target, vis_mask } => eval(&pred, &target, vis_mask.as_deref()),
        Command::Gradcheck { seed, coordinates, min_fraction } => gradcheck(seed, coordinates, min_fraction),
        Command::GenScene { preset, seed, size, out } => gen(&preset, seed, size, &out),
        Command::ExportMesh { fit, out } => export_mesh(&fit, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
