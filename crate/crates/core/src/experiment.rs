//! Config-driven end-to-end pipelines.
//!
//! Every run derives all stage seeds from `master_seed` via the labelled
//! hash in [`crate::seed`], writes the resolved configuration and a status
//! line beside its outputs, and finishes with a content-hash manifest of the
//! artifact directory. A failing stage still leaves its partial outputs,
//! the error in `run_status.txt` and a complete manifest behind.

use std::path::{Path, PathBuf};

use ndarray::{s, Array2};

use crate::analysis::{
    compute_psf, dose_sweep, frc, gradient_norm, image_error, noise_resolution_sweep,
    power_spectrum, stride_scan, svd_metrics, ErrorMetric, StrideMethod,
};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::forward::{
    apply_fabrication, measure, measure_pairs, perturb_alignment, AcquisitionModel,
    MisalignmentModel, ObjectImage, PairSchedule,
};
use crate::io;
use crate::patterns::{
    bin_image, bin_set, complement, extract_pattern_set, gen_master, gen_mura,
    unique_pattern_set, MaskKind, MasterMask, PatternSet,
};
use crate::phantoms::make_phantom;
use crate::recon::{recon_differential, solve, ReconImage};
use crate::seed;

/// What a finished run produced.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub dir: PathBuf,
    /// Manifest entries as (relative path, SHA-256).
    pub files: Vec<(String, String)>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(Error::Io)
}

/// Executes the configured experiment end to end.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(Error::Io)?;
    write_text(&dir.join("resolved.cfg"), &cfg.resolved_text())?;

    let outcome = match cfg.experiment {
        ExperimentKind::Pipeline => pipeline(cfg, &dir),
        ExperimentKind::Noise => noise_experiment(cfg, &dir),
        ExperimentKind::Misalign => misalign_experiment(cfg, &dir),
        ExperimentKind::Flux => flux_experiment(cfg, &dir),
        ExperimentKind::Fabrication => fabrication_experiment(cfg, &dir),
        ExperimentKind::Dose => dose_experiment(cfg, &dir),
        ExperimentKind::Multiscale => multiscale_run(cfg).map(|_| ()),
    };
    let status = match &outcome {
        Ok(()) => "status = ok".to_string(),
        Err(e) => format!("status = error\nmessage = {e}"),
    };
    write_text(&dir.join("run_status.txt"), &status)?;
    io::write_manifest(&dir)?;
    outcome?;
    let files = io::read_manifest(&dir)?
        .into_iter()
        .map(|(hash, rel)| (rel, hash))
        .collect();
    Ok(RunReport { dir, files })
}

/// Builds the configured master mask. MURA masters come out at their natural
/// (2p−1)² size regardless of the configured dimensions.
pub fn build_master(cfg: &ExperimentConfig) -> Result<MasterMask> {
    match cfg.mask.kind {
        MaskKind::Mura { p } => gen_mura(p),
        _ => gen_master(&cfg.mask, cfg.mask_width, cfg.mask_height, seed::derive(cfg.master_seed, "mask")),
    }
}

fn build_set(cfg: &ExperimentConfig, master: &MasterMask) -> Result<PatternSet> {
    extract_pattern_set(master, &cfg.grid)
}

fn build_object(cfg: &ExperimentConfig) -> Result<ObjectImage> {
    make_phantom(&cfg.object)
}

// ---------------------------------------------------------------------------
// pipeline: gen → extract → measure → recon → requested analyses

fn pipeline(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let master = build_master(cfg)?;
    io::write_mask(&dir.join("mask"), &master)?;
    let set = build_set(cfg, &master)?;
    let object = build_object(cfg)?;
    io::write_pgm16(&dir.join("object.pgm"), &object.values)?;

    let acq = cfg.acquisition();
    let rec = measure(&set, &object, &acq, seed::derive(cfg.master_seed, "measure"))?;
    io::write_csv(
        &dir.join("buckets.csv"),
        "bucket signals",
        &["j", "bucket"],
        &rec.buckets.iter().enumerate().map(|(j, &b)| vec![j as f64, b]).collect::<Vec<_>>(),
    )?;
    let img = solve(&set, &rec.buckets, &cfg.solver)?;
    io::write_grid(&dir.join("recon.csv"), &img)?;
    io::write_grid_preview(&dir.join("recon.pgm"), &img)?;
    let nmse = image_error(&img.values, &object.values, ErrorMetric::Nmse)?;
    let rmse = image_error(&img.values, &object.values, ErrorMetric::Rmse)?;
    io::write_csv(
        &dir.join("metrics.csv"),
        &format!("solver = {}", cfg.solver.describe()),
        &["nmse", "rmse"],
        &[vec![nmse, rmse]],
    )?;

    for a in &cfg.analyses {
        match a.as_str() {
            "psf" => {
                let n2 = set.pixel_count();
                let points = n2.min(441);
                let psf = compute_psf(
                    &set,
                    &AcquisitionModel::ideal(),
                    &cfg.solver,
                    points,
                    seed::derive(cfg.master_seed, "psf"),
                )?;
                let (h, w) = psf.psf.dim();
                let center = psf.psf.row(h / 2).to_vec();
                io::write_csv(
                    &dir.join("psf.csv"),
                    &format!(
                        "fwhm = {:.4}, fwhm_x = {:.4}, fwhm_y = {:.4}, method = {}",
                        psf.fwhm(),
                        psf.fwhm_x,
                        psf.fwhm_y,
                        psf.method
                    ),
                    &["x", "psf_center_row"],
                    &center
                        .iter()
                        .enumerate()
                        .map(|(x, &v)| vec![x as f64 - (w / 2) as f64, v])
                        .collect::<Vec<_>>(),
                )?;
            }
            "frc" => {
                let curve = frc(&img.values, &object.values)?;
                let rows: Vec<Vec<f64>> = curve
                    .k
                    .iter()
                    .zip(&curve.frc)
                    .zip(&curve.two_sigma)
                    .zip(&curve.one_bit)
                    .map(|(((&k, &f), &ts), &ob)| vec![k, f, ts, ob])
                    .collect();
                io::write_csv(
                    &dir.join("frc.csv"),
                    "FRC of reconstruction against truth",
                    &["k_cyc_per_px", "frc", "two_sigma", "one_bit"],
                    &rows,
                )?;
            }
            "spectrum" => {
                let spec = power_spectrum(&set.patterns[0])?;
                let rows: Vec<Vec<f64>> = spec
                    .k
                    .iter()
                    .zip(&spec.p)
                    .zip(&spec.step)
                    .map(|((&k, &p), &st)| vec![k, p, st])
                    .collect();
                io::write_csv(
                    &dir.join("spectrum.csv"),
                    "angular-averaged pattern power spectrum",
                    &["k_cyc_per_fov", "power", "step_px"],
                    &rows,
                )?;
            }
            "svd" => {
                let rep = svd_metrics(&set)?;
                let rows: Vec<Vec<f64>> = rep
                    .singular_values
                    .iter()
                    .enumerate()
                    .map(|(i, &sv)| vec![i as f64, sv])
                    .collect();
                io::write_csv(
                    &dir.join("svd.csv"),
                    &format!(
                        "stable_rank = {:.4}, condition_number = {:.6e}",
                        rep.stable_rank, rep.condition_number
                    ),
                    &["index", "sigma"],
                    &rows,
                )?;
            }
            "stride" => {
                let strides: Vec<usize> = (1..=8).collect();
                let curve = stride_scan(
                    &master,
                    cfg.grid.fov_w,
                    &strides,
                    StrideMethod::PowerSpectrum,
                    cfg.grid.count.min(512),
                    None,
                    None,
                    seed::derive(cfg.master_seed, "stride"),
                )?;
                let rows: Vec<Vec<f64>> = curve
                    .strides
                    .iter()
                    .zip(&curve.score)
                    .map(|(&st, &sc)| vec![st as f64, sc])
                    .collect();
                io::write_csv(
                    &dir.join("stride.csv"),
                    &format!("recommended = {}", curve.recommended),
                    &["stride_px", "score"],
                    &rows,
                )?;
            }
            "gradient" => {
                let g = gradient_norm(&set)?;
                io::write_csv(
                    &dir.join("gradient.csv"),
                    "relative gradient magnitude of the mean-corrected set",
                    &["gradient_norm"],
                    &[vec![g]],
                )?;
            }
            other => return Err(Error::Parameter(format!("unknown analysis '{other}'"))),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// noise: FRC resolution vs flux

fn noise_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let master = build_master(cfg)?;
    let set = build_set(cfg, &master)?;
    let rows = noise_resolution_sweep(
        &set,
        &cfg.fluxes,
        cfg.trials,
        std::slice::from_ref(&cfg.solver),
        seed::derive(cfg.master_seed, "noise"),
    )?;
    io::write_csv(
        &dir.join("noise.csv"),
        &format!("solver = {}", cfg.solver.describe()),
        &["flux", "resolution_px"],
        &rows.iter().map(|r| vec![r.flux, r.resolution]).collect::<Vec<_>>(),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// misalign: NMSE vs misalignment sigma

/// Interior view two pixels in from each edge; border pixels sit in the
/// constant fill of misaligned patterns and are unrecoverable after mean
/// correction, so they are excluded from the error.
fn interior(a: &Array2<f64>) -> Array2<f64> {
    let (h, w) = a.dim();
    if h <= 4 || w <= 4 {
        return a.clone();
    }
    a.slice(s![2..h - 2, 2..w - 2]).to_owned()
}

fn misalign_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let object = build_object(cfg)?;
    let truth = interior(&object.values);
    let acq = AcquisitionModel::ideal();
    let (fh, fw) = (cfg.grid.fov_h, cfg.grid.fov_w);
    let mut rows = Vec::new();
    for &sigma in &cfg.sigmas {
        let mut acc = 0.0f64;
        for t in 0..cfg.trials {
            let ts = seed::derive_indexed(cfg.master_seed, "misalign-trial", t as u64);
            let set = unique_pattern_set(&cfg.mask, fw, fh, cfg.grid.count, ts, Some((2, 0.5)))?;
            let rec = measure(&set, &object, &acq, seed::derive(ts, "measure"))?;
            // buckets come from the true (nominal) patterns; the solver sees
            // the misaligned expectation. sigma is the total displacement
            // std, split evenly between the axes.
            let model = MisalignmentModel::isotropic(sigma / std::f64::consts::SQRT_2);
            let pert = perturb_alignment(&set, &model, seed::derive(ts, "perturb"));
            let img = solve(&pert, &rec.buckets, &cfg.solver)?;
            acc += image_error(&interior(&img.values), &truth, ErrorMetric::Nmse)?;
        }
        rows.push(vec![sigma, acc / cfg.trials as f64]);
    }
    io::write_csv(
        &dir.join("misalign.csv"),
        &format!("solver = {}, trials = {}", cfg.solver.describe(), cfg.trials),
        &["sigma_px", "nmse"],
        &rows,
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// flux: drift vs differential pos/neg pairs

fn flux_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let object = build_object(cfg)?;
    let (fh, fw) = (cfg.grid.fov_h, cfg.grid.fov_w);
    let j = cfg.grid.count;
    if j % 2 != 0 {
        return Err(Error::Parameter("flux experiment needs an even pattern count".into()));
    }
    let drift = cfg.acquisition().with_drift(cfg.drift.max(0.01));
    let stable = cfg.acquisition();
    let mut sums = [0.0f64; 5]; // unique/pairs-adj/pairs-sep under drift, unique/pairs-adj stable
    for t in 0..cfg.trials {
        let ts = seed::derive_indexed(cfg.master_seed, "flux-trial", t as u64);
        let uniq = unique_pattern_set(&cfg.mask, fw, fh, j, seed::derive(ts, "unique"), None)?;
        let pos = unique_pattern_set(&cfg.mask, fw, fh, j / 2, seed::derive(ts, "pairs"), None)?;
        let neg = complement(&pos);
        let nmse_unique = |acq: &AcquisitionModel| -> Result<f64> {
            let rec = measure(&uniq, &object, acq, seed::derive(ts, "m-unique"))?;
            let img = solve(&uniq, &rec.buckets, &cfg.solver)?;
            image_error(&img.values, &object.values, ErrorMetric::Nmse)
        };
        let nmse_pairs = |acq: &AcquisitionModel, sched: PairSchedule| -> Result<f64> {
            let (rp, rn) = measure_pairs(&pos, &neg, &object, acq, sched, seed::derive(ts, "m-pairs"))?;
            let img = recon_differential(&pos, &neg, &rp.buckets, &rn.buckets, &cfg.solver)?;
            image_error(&img.values, &object.values, ErrorMetric::Nmse)
        };
        sums[0] += nmse_unique(&drift)?;
        sums[1] += nmse_pairs(&drift, PairSchedule::Adjacent)?;
        sums[2] += nmse_pairs(&drift, PairSchedule::Separated)?;
        sums[3] += nmse_unique(&stable)?;
        sums[4] += nmse_pairs(&stable, PairSchedule::Adjacent)?;
    }
    let n = cfg.trials as f64;
    io::write_csv(
        &dir.join("flux.csv"),
        &format!("solver = {}, trials = {}, drift = {}", cfg.solver.describe(), cfg.trials, cfg.drift.max(0.01)),
        &["unique_drift", "pairs_adjacent_drift", "pairs_separated_drift", "unique_stable", "pairs_adjacent_stable"],
        &[sums.iter().map(|s| s / n).collect()],
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// fabrication: defect-free vs measured vs assumed patterns

fn fabrication_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let master = build_master(cfg)?;
    let fab_master = apply_fabrication(&master, &cfg.fabrication, seed::derive(cfg.master_seed, "fab"))?;
    let ideal_set = build_set(cfg, &master)?;
    let fab_set = build_set(cfg, &fab_master)?;
    let object = build_object(cfg)?;
    let acq = cfg.acquisition();

    let nmse = |recon_set: &PatternSet, meas_set: &PatternSet, label: &str| -> Result<f64> {
        let rec = measure(meas_set, &object, &acq, seed::derive(cfg.master_seed, label))?;
        let img = solve(recon_set, &rec.buckets, &cfg.solver)?;
        image_error(&img.values, &object.values, ErrorMetric::Nmse)
    };
    // defect-free: ideal mask, ideal knowledge. measured: defective mask,
    // characterized (true) patterns. assumed: defective mask, ideal patterns.
    let defect_free = nmse(&ideal_set, &ideal_set, "fab-df")?;
    let measured = nmse(&fab_set, &fab_set, "fab-ms")?;
    let assumed = nmse(&ideal_set, &fab_set, "fab-as")?;
    io::write_csv(
        &dir.join("fabrication.csv"),
        &format!("solver = {}", cfg.solver.describe()),
        &["defect_free_nmse", "measured_nmse", "assumed_nmse"],
        &[vec![defect_free, measured, assumed]],
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// dose: RMSE vs number of measurements at fixed total dose

fn dose_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let master = build_master(cfg)?;
    let object = build_object(cfg)?;
    let rows = dose_sweep(
        &master,
        &object,
        cfg.dose_total,
        &cfg.dose_j,
        cfg.sigma_m,
        cfg.trials,
        seed::derive(cfg.master_seed, "dose"),
    )?;
    io::write_csv(
        &dir.join("dose.csv"),
        &format!("total_dose = {}, sigma_m = {}, trials = {}", cfg.dose_total, cfg.sigma_m, cfg.trials),
        &["j", "rmse_total", "rmse_0", "rmse_p", "rmse_m", "quadrature"],
        &rows
            .iter()
            .map(|r| vec![r.j as f64, r.rmse_total, r.rmse_0, r.rmse_p, r.rmse_m, r.quadrature])
            .collect::<Vec<_>>(),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// multiscale: progressive reconstruction with pixel binning

/// One stage of a multiscale run.
#[derive(Clone, Debug)]
pub struct MultiscaleStage {
    pub budget: usize,
    pub bin_factor: usize,
    pub nmse: f64,
    pub image: ReconImage,
}

/// Reconstructs after each measurement budget at the matching binning
/// factor. The bucket sequence is shared across stages (a stage uses the
/// first `budget` measurements), patterns and object are block-averaged by
/// the stage factor, and buckets are rescaled by 1/factor² so the binned
/// system stays consistent with the full-resolution measurements.
pub fn multiscale_run(cfg: &ExperimentConfig) -> Result<Vec<MultiscaleStage>> {
    cfg.validate()?;
    if cfg.budgets.is_empty() {
        return Err(Error::Parameter("multiscale needs at least one stage".into()));
    }
    if cfg.budgets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("multiscale budgets must be strictly increasing".into()));
    }
    let max_budget = *cfg.budgets.last().unwrap();
    let mut grid = cfg.grid;
    grid.count = max_budget;
    let master = build_master(cfg)?;
    let set = extract_pattern_set(&master, &grid)?;
    let object = build_object(cfg)?;
    let acq = cfg.acquisition();
    let rec = measure(&set, &object, &acq, seed::derive(cfg.master_seed, "multiscale"))?;

    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(Error::Io)?;

    let mut stages = Vec::new();
    let mut rows = Vec::new();
    for (stage_idx, (&budget, &factor)) in cfg.budgets.iter().zip(&cfg.bin_factors).enumerate() {
        if factor == 0 || cfg.grid.fov_w % factor != 0 || cfg.grid.fov_h % factor != 0 {
            return Err(Error::Parameter(format!(
                "bin factor {factor} does not divide the {}x{} FOV",
                cfg.grid.fov_w, cfg.grid.fov_h
            )));
        }
        let sub = PatternSet::from_patterns(
            set.patterns[..budget].to_vec(),
            set.offsets[..budget].to_vec(),
            format!("{} [first {budget}]", set.source),
        )?;
        let (binned_set, binned_obj, scale) = if factor > 1 {
            (bin_set(&sub, factor)?, bin_image(&object.values, factor)?, (factor * factor) as f64)
        } else {
            (sub, object.values.clone(), 1.0)
        };
        let buckets: Vec<f64> = rec.buckets[..budget].iter().map(|b| b / scale).collect();
        let img = solve(&binned_set, &buckets, &cfg.solver)?;
        let nmse = image_error(&img.values, &binned_obj, ErrorMetric::Nmse)?;
        io::write_grid_preview(&dir.join(format!("stage_{stage_idx}.pgm")), &img)?;
        rows.push(vec![budget as f64, factor as f64, nmse]);
        stages.push(MultiscaleStage { budget, bin_factor: factor, nmse, image: img });
    }
    io::write_csv(
        &dir.join("multiscale.csv"),
        &format!("solver = {}", cfg.solver.describe()),
        &["budget", "bin_factor", "nmse"],
        &rows,
    )?;
    Ok(stages)
}
