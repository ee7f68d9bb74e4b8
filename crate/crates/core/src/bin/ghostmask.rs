//! Command-line front end: config-driven mask synthesis, simulation and
//! analysis. Exit codes: 0 ok, 2 config/validation error, 3 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ghostmask::analysis::{image_error, perturbation_report, ErrorMetric};
use ghostmask::config::{ExperimentConfig, ExperimentKind};
use ghostmask::experiment::{self, build_master};
use ghostmask::forward::{measure, perturb_alignment, MisalignmentModel};
use ghostmask::io;
use ghostmask::patterns::extract_pattern_set;
use ghostmask::phantoms::make_phantom;
use ghostmask::recon::solve;
use ghostmask::seed;
use ghostmask::{Error, Result};

#[derive(Parser)]
#[command(name = "ghostmask", version, about = "Ghost-imaging mask synthesis and analysis")]
struct Cli {
    /// Experiment configuration (flat key=value file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides master_seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides output_dir from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; GHOSTMASK_THREADS is honored when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress the completion summary.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalyzeKind {
    Psf,
    Frc,
    Spectrum,
    Svd,
    Stride,
    Gradient,
    Bound,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Noise,
    Misalign,
    Flux,
    Fabrication,
    Dose,
    Multiscale,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the configured master mask.
    GenMask,
    /// Extract the configured pattern set and write it as a PGM stack.
    Extract,
    /// Generate the configured test object.
    Phantom,
    /// Simulate bucket measurements.
    Measure,
    /// Measure and reconstruct with the configured solver.
    Recon,
    /// Run a single analysis on the configured system.
    Analyze {
        #[arg(value_enum)]
        kind: AnalyzeKind,
    },
    /// Run one of the named experiment pipelines.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentArg,
    },
    /// Run the experiment declared in the config.
    Run,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Validation("--config is required".into()))?;
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish(dir: &std::path::Path) -> Result<()> {
    io::write_manifest(dir)
}

fn dispatch(cli: &Cli) -> Result<PathBuf> {
    let mut cfg = load_config(cli)?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(Error::Io)?;

    match &cli.cmd {
        Cmd::GenMask => {
            let master = build_master(&cfg)?;
            io::write_mask(&dir.join("mask"), &master)?;
            finish(&dir)?;
        }
        Cmd::Extract => {
            let master = build_master(&cfg)?;
            let set = extract_pattern_set(&master, &cfg.grid)?;
            io::write_pattern_stack(&dir.join("patterns"), &set)?;
            finish(&dir)?;
        }
        Cmd::Phantom => {
            let object = make_phantom(&cfg.object)?;
            io::write_pgm16(&dir.join("object.pgm"), &object.values)?;
            finish(&dir)?;
        }
        Cmd::Measure => {
            let master = build_master(&cfg)?;
            let set = extract_pattern_set(&master, &cfg.grid)?;
            let object = make_phantom(&cfg.object)?;
            let rec = measure(&set, &object, &cfg.acquisition(), seed::derive(cfg.master_seed, "measure"))?;
            io::write_csv(
                &dir.join("buckets.csv"),
                "bucket signals",
                &["j", "bucket"],
                &rec.buckets.iter().enumerate().map(|(j, &b)| vec![j as f64, b]).collect::<Vec<_>>(),
            )?;
            finish(&dir)?;
        }
        Cmd::Recon => {
            let master = build_master(&cfg)?;
            let set = extract_pattern_set(&master, &cfg.grid)?;
            let object = make_phantom(&cfg.object)?;
            let rec = measure(&set, &object, &cfg.acquisition(), seed::derive(cfg.master_seed, "measure"))?;
            let img = solve(&set, &rec.buckets, &cfg.solver)?;
            io::write_grid(&dir.join("recon.csv"), &img)?;
            io::write_grid_preview(&dir.join("recon.pgm"), &img)?;
            let nmse = image_error(&img.values, &object.values, ErrorMetric::Nmse)?;
            io::write_csv(
                &dir.join("metrics.csv"),
                &format!("solver = {}", cfg.solver.describe()),
                &["nmse"],
                &[vec![nmse]],
            )?;
            finish(&dir)?;
        }
        Cmd::Analyze { kind: AnalyzeKind::Bound } => {
            // least-squares perturbation bound against a misaligned copy of
            // the configured system
            let master = build_master(&cfg)?;
            let set = extract_pattern_set(&master, &cfg.grid)?;
            let object = make_phantom(&cfg.object)?;
            let sigma = cfg.sigmas.first().copied().unwrap_or(0.25);
            let pert = perturb_alignment(
                &set,
                &MisalignmentModel::isotropic(sigma / std::f64::consts::SQRT_2),
                seed::derive(cfg.master_seed, "bound-perturb"),
            );
            let acq = cfg.acquisition();
            let b0 = measure(&set, &object, &acq, seed::derive(cfg.master_seed, "bound-b0"))?;
            let b1 = measure(&pert, &object, &acq, seed::derive(cfg.master_seed, "bound-b1"))?;
            let rep = perturbation_report(&set, &pert, &b0.buckets, &b1.buckets)?;
            io::write_csv(
                &dir.join("bound.csv"),
                &format!("sigma = {sigma}, applicable = {}", rep.applicable),
                &["epsilon", "kappa", "sin_theta", "predicted_rel_error", "empirical_rel_error"],
                &[vec![
                    rep.epsilon,
                    rep.kappa,
                    rep.sin_theta,
                    rep.predicted_relative_error,
                    rep.empirical_relative_error,
                ]],
            )?;
            finish(&dir)?;
        }
        Cmd::Analyze { kind } => {
            cfg.experiment = ExperimentKind::Pipeline;
            cfg.analyses = vec![match kind {
                AnalyzeKind::Psf => "psf",
                AnalyzeKind::Frc => "frc",
                AnalyzeKind::Spectrum => "spectrum",
                AnalyzeKind::Svd => "svd",
                AnalyzeKind::Stride => "stride",
                AnalyzeKind::Gradient => "gradient",
                AnalyzeKind::Bound => unreachable!(),
            }
            .to_string()];
            experiment::run(&cfg)?;
        }
        Cmd::Experiment { kind } => {
            cfg.experiment = match kind {
                ExperimentArg::Noise => ExperimentKind::Noise,
                ExperimentArg::Misalign => ExperimentKind::Misalign,
                ExperimentArg::Flux => ExperimentKind::Flux,
                ExperimentArg::Fabrication => ExperimentKind::Fabrication,
                ExperimentArg::Dose => ExperimentKind::Dose,
                ExperimentArg::Multiscale => ExperimentKind::Multiscale,
            };
            experiment::run(&cfg)?;
        }
        Cmd::Run => {
            experiment::run(&cfg)?;
        }
    }
    Ok(dir)
}

fn is_validation(err: &Error) -> bool {
    matches!(
        err,
        Error::Parameter(_) | Error::Validation(_) | Error::Config { .. } | Error::Dimension(_)
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("GHOSTMASK_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(&cli) {
        Ok(dir) => {
            if !cli.quiet {
                println!("ok: artifacts in {}", dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if is_validation(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
