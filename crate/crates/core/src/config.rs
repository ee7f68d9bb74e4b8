//! Flat key=value experiment configuration.
//!
//! One key per line, `#` comments, no sections. Unknown keys are rejected
//! with their line number so typos fail loudly. Every run writes the
//! resolved configuration (all effective values, defaults included) beside
//! its outputs.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::forward::{AcquisitionModel, FabricationModel};
use crate::patterns::{BinarizePolicy, GridSpec, MaskKind, MaskParams};
use crate::phantoms::{PhantomKind, PhantomSpec};
use crate::recon::SolverConfig;

/// Which end-to-end pipeline a `run` executes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    /// gen → extract → measure → recon → requested analyses.
    Pipeline,
    Noise,
    Misalign,
    Flux,
    Fabrication,
    Dose,
    Multiscale,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Pipeline => "pipeline",
            ExperimentKind::Noise => "noise",
            ExperimentKind::Misalign => "misalign",
            ExperimentKind::Flux => "flux",
            ExperimentKind::Fabrication => "fabrication",
            ExperimentKind::Dose => "dose",
            ExperimentKind::Multiscale => "multiscale",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "pipeline" => ExperimentKind::Pipeline,
            "noise" => ExperimentKind::Noise,
            "misalign" => ExperimentKind::Misalign,
            "flux" => ExperimentKind::Flux,
            "fabrication" => ExperimentKind::Fabrication,
            "dose" => ExperimentKind::Dose,
            "multiscale" => ExperimentKind::Multiscale,
            _ => return None,
        })
    }
}

/// Fully resolved experiment description.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub experiment: ExperimentKind,

    pub mask: MaskParams,
    pub mask_width: usize,
    pub mask_height: usize,

    pub grid: GridSpec,
    pub object: PhantomSpec,

    pub flux: f64,
    pub sigma_m: f64,
    pub drift: f64,
    pub solver: SolverConfig,
    /// Analyses run by the pipeline: subset of psf/frc/spectrum/svd/stride/gradient.
    pub analyses: Vec<String>,

    pub trials: usize,
    /// Flux ladder for the noise experiment.
    pub fluxes: Vec<f64>,
    /// Misalignment sigmas (total displacement std, px).
    pub sigmas: Vec<f64>,
    pub dose_total: f64,
    pub dose_j: Vec<usize>,
    /// Multiscale measurement budgets (cumulative) and matching bin factors.
    pub budgets: Vec<usize>,
    pub bin_factors: Vec<usize>,
    pub fabrication: FabricationModel,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 1,
            output_dir: PathBuf::from("out"),
            experiment: ExperimentKind::Pipeline,
            mask: MaskParams::new(MaskKind::Binary),
            mask_width: 96,
            mask_height: 96,
            grid: GridSpec::square(32, 32, 1),
            object: PhantomSpec::star(32),
            flux: 1000.0,
            sigma_m: 0.0,
            drift: 0.0,
            solver: SolverConfig::Dgi,
            analyses: Vec::new(),
            trials: 8,
            fluxes: vec![0.5, 2.0, 8.0, 32.0, 128.0, 512.0],
            sigmas: vec![0.25, 0.5, 1.0],
            dose_total: 5000.0,
            dose_j: vec![256, 512, 1024, 2048, 4096],
            budgets: vec![2048, 8192, 32768, 131072],
            bin_factors: vec![8, 4, 2, 1],
            fabrication: FabricationModel::typical(100.0),
        }
    }
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::Parameter(format!("config line {line}: {}", msg.into()))
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| bad(line, format!("{key}: cannot parse value '{v}'")))
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(line, key, s))
        .collect()
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parameter(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    /// Parses a flat key=value document. Unknown keys, duplicate keys and
    /// malformed values are all reported with their 1-based line number.
    pub fn from_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        let mut any = false;
        // staged mask fields: the kind line and its parameters may arrive in
        // any order, so they are assembled after the scan
        let mut mask_kind: Option<(usize, String)> = None;
        let mut mask_mu = 0.5f64;
        let mut mask_sigma = 0.5f64;
        let mut mask_alpha = 1.0f64;
        let mut mask_beta = 0.01f64;
        let mut mask_p = 47u32;
        let mut mask_blur: Option<f64> = None;
        let mut mask_binarize: Option<(usize, String)> = None;
        let mut solver_method: Option<(usize, String)> = None;
        let mut solver_sweeps = 4usize;
        let mut solver_lambda = 0.5f64;
        let mut solver_iters = 50usize;
        let mut solver_step = 1.0f64;
        let mut solver_tolerance = 1e-10f64;
        let mut object_kind: Option<(usize, String)> = None;
        let mut object_size: Option<usize> = None;
        let mut object_seed = 0u64;
        let mut object_lo = 0.0f64;
        let mut object_hi = 1.0f64;
        let mut grid_fov: Option<usize> = None;
        let mut grid_count: Option<usize> = None;
        let mut grid_stride = 1usize;
        let mut grid_columns: Option<usize> = None;

        for (idx, raw) in text.lines().enumerate() {
            let ln = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(ln, "expected key = value"))?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(bad(ln, format!("duplicate key '{key}'")));
            }
            any = true;
            match key {
                "master_seed" => cfg.master_seed = parse_num(ln, key, value)?,
                "output_dir" => cfg.output_dir = PathBuf::from(value),
                "experiment" => {
                    cfg.experiment = ExperimentKind::parse(value)
                        .ok_or_else(|| bad(ln, format!("unknown experiment '{value}'")))?;
                }
                "mask.kind" => mask_kind = Some((ln, value.to_string())),
                "mask.mu" => mask_mu = parse_num(ln, key, value)?,
                "mask.sigma" => mask_sigma = parse_num(ln, key, value)?,
                "mask.alpha" => mask_alpha = parse_num(ln, key, value)?,
                "mask.beta" => mask_beta = parse_num(ln, key, value)?,
                "mask.p" => mask_p = parse_num(ln, key, value)?,
                "mask.blur" => mask_blur = Some(parse_num(ln, key, value)?),
                "mask.binarize" => mask_binarize = Some((ln, value.to_string())),
                "mask.width" => cfg.mask_width = parse_num(ln, key, value)?,
                "mask.height" => cfg.mask_height = parse_num(ln, key, value)?,
                "grid.fov" => grid_fov = Some(parse_num(ln, key, value)?),
                "grid.count" => grid_count = Some(parse_num(ln, key, value)?),
                "grid.stride" => grid_stride = parse_num(ln, key, value)?,
                "grid.columns" => grid_columns = Some(parse_num(ln, key, value)?),
                "object.kind" => object_kind = Some((ln, value.to_string())),
                "object.size" => object_size = Some(parse_num(ln, key, value)?),
                "object.seed" => object_seed = parse_num(ln, key, value)?,
                "object.lo" => object_lo = parse_num(ln, key, value)?,
                "object.hi" => object_hi = parse_num(ln, key, value)?,
                "acquisition.flux" => cfg.flux = parse_num(ln, key, value)?,
                "acquisition.sigma_m" => cfg.sigma_m = parse_num(ln, key, value)?,
                "acquisition.drift" => cfg.drift = parse_num(ln, key, value)?,
                "solver.method" => solver_method = Some((ln, value.to_string())),
                "solver.sweeps" => solver_sweeps = parse_num(ln, key, value)?,
                "solver.lambda" => solver_lambda = parse_num(ln, key, value)?,
                "solver.iters" => solver_iters = parse_num(ln, key, value)?,
                "solver.step" => solver_step = parse_num(ln, key, value)?,
                "solver.tolerance" => solver_tolerance = parse_num(ln, key, value)?,
                "analysis.metrics" => {
                    cfg.analyses = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| s.to_string())
                        .collect();
                    for a in &cfg.analyses {
                        match a.as_str() {
                            "psf" | "frc" | "spectrum" | "svd" | "stride" | "gradient" => {}
                            other => return Err(bad(ln, format!("unknown analysis '{other}'"))),
                        }
                    }
                }
                "trials" => cfg.trials = parse_num(ln, key, value)?,
                "noise.fluxes" => cfg.fluxes = parse_list(ln, key, value)?,
                "misalign.sigmas" => cfg.sigmas = parse_list(ln, key, value)?,
                "dose.total" => cfg.dose_total = parse_num(ln, key, value)?,
                "dose.j_values" => cfg.dose_j = parse_list(ln, key, value)?,
                "multiscale.budgets" => cfg.budgets = parse_list(ln, key, value)?,
                "multiscale.bin_factors" => cfg.bin_factors = parse_list(ln, key, value)?,
                "fabrication.t_max" => cfg.fabrication.t_max = parse_num(ln, key, value)?,
                "fabrication.t_min" => cfg.fabrication.t_min = parse_num(ln, key, value)?,
                "fabrication.center_boost" => cfg.fabrication.center_boost = parse_num(ln, key, value)?,
                "fabrication.slow_variation_rel_sigma" => cfg.fabrication.slow_variation_rel_sigma = parse_num(ln, key, value)?,
                "fabrication.profile_sigma" => cfg.fabrication.profile_sigma = parse_num(ln, key, value)?,
                other => return Err(bad(ln, format!("unknown key '{other}'"))),
            }
        }

        if !any {
            return Err(Error::Parameter("config line 1: empty configuration".into()));
        }

        if let Some((ln, kind)) = mask_kind {
            let base = match kind.as_str() {
                "gaussian" => MaskKind::Gaussian { mu: mask_mu, sigma: mask_sigma },
                "uniform" => MaskKind::Uniform,
                "binary" => MaskKind::Binary,
                "fractal" => MaskKind::Fractal { alpha: mask_alpha, beta: mask_beta },
                "mura" => MaskKind::Mura { p: mask_p },
                other => return Err(bad(ln, format!("unknown mask kind '{other}'"))),
            };
            let mut params = MaskParams::new(base);
            if let Some(b) = mask_blur {
                params = params.with_blur(b);
            }
            if let Some((bln, pol)) = mask_binarize {
                let policy = if pol == "median" {
                    BinarizePolicy::Median
                } else {
                    BinarizePolicy::Fixed(parse_num(bln, "mask.binarize", &pol)?)
                };
                params = params.with_binarize(policy);
            }
            cfg.mask = params;
        }

        if let Some((ln, method)) = solver_method {
            cfg.solver = match method.as_str() {
                "adjoint_raw" => SolverConfig::AdjointRaw,
                "adjoint" | "adjoint_mean_corrected" => SolverConfig::AdjointMeanCorrected,
                "dgi" => SolverConfig::Dgi,
                "kaczmarz" => SolverConfig::Kaczmarz {
                    sweeps: solver_sweeps,
                    lambda: solver_lambda,
                    order_seed: 0,
                },
                "landweber" => SolverConfig::Landweber { iters: solver_iters, step: solver_step },
                "pinv" => SolverConfig::Pinv { tolerance: solver_tolerance },
                other => return Err(bad(ln, format!("unknown solver '{other}'"))),
            };
        }

        let fov = grid_fov.unwrap_or(32);
        let columns = grid_columns.unwrap_or_else(|| {
            (cfg.mask_width.saturating_sub(fov) / grid_stride.max(1) + 1).max(1)
        });
        let count = grid_count.unwrap_or(columns * columns);
        cfg.grid = GridSpec {
            fov_w: fov,
            fov_h: fov,
            count,
            stride_x: grid_stride,
            stride_y: grid_stride,
            columns,
        };

        let osize = object_size.unwrap_or(fov);
        if let Some((ln, kind)) = object_kind {
            let base = match kind.as_str() {
                "star" => PhantomSpec::star(osize),
                "circle" => PhantomSpec::circle(osize, object_seed),
                "constant" => PhantomSpec::new(
                    PhantomKind::Constant { v: object_hi },
                    osize,
                    osize,
                    object_seed,
                ),
                other => return Err(bad(ln, format!("unknown object kind '{other}'"))),
            };
            cfg.object = base.levels(object_lo, object_hi);
        } else {
            cfg.object = PhantomSpec::star(osize).levels(object_lo, object_hi);
        }

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.fov_w == 0 || self.grid.count == 0 {
            return Err(Error::Parameter("grid must have positive FOV and count".into()));
        }
        if self.experiment == ExperimentKind::Multiscale
            && self.budgets.len() != self.bin_factors.len()
        {
            return Err(Error::Parameter(format!(
                "multiscale stage lists misaligned: {} budgets vs {} bin factors",
                self.budgets.len(),
                self.bin_factors.len()
            )));
        }
        if self.experiment == ExperimentKind::Pipeline && self.analyses.is_empty() {
            // a pipeline with no analyses still reconstructs; nothing to check
        }
        Ok(())
    }

    pub fn acquisition(&self) -> AcquisitionModel {
        let mut acq = AcquisitionModel::ideal().with_flux(self.flux);
        acq.per_measurement_sigma = self.sigma_m;
        if self.drift > 0.0 {
            acq = acq.with_drift(self.drift);
        }
        acq
    }

    /// Canonical serialization of every effective value; written beside the
    /// outputs so a run is reproducible from its artifact directory alone.
    pub fn resolved_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# resolved configuration");
        let _ = writeln!(s, "master_seed = {}", self.master_seed);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "experiment = {}", self.experiment.name());
        match &self.mask.kind {
            MaskKind::Gaussian { mu, sigma } => {
                let _ = writeln!(s, "mask.kind = gaussian");
                let _ = writeln!(s, "mask.mu = {mu}");
                let _ = writeln!(s, "mask.sigma = {sigma}");
            }
            MaskKind::Uniform => {
                let _ = writeln!(s, "mask.kind = uniform");
            }
            MaskKind::Binary => {
                let _ = writeln!(s, "mask.kind = binary");
            }
            MaskKind::Fractal { alpha, beta } => {
                let _ = writeln!(s, "mask.kind = fractal");
                let _ = writeln!(s, "mask.alpha = {alpha}");
                let _ = writeln!(s, "mask.beta = {beta}");
            }
            MaskKind::Mura { p } => {
                let _ = writeln!(s, "mask.kind = mura");
                let _ = writeln!(s, "mask.p = {p}");
            }
        }
        if let Some(b) = self.mask.post.blur {
            let _ = writeln!(s, "mask.blur = {b}");
        }
        match self.mask.post.binarize {
            Some(BinarizePolicy::Median) => {
                let _ = writeln!(s, "mask.binarize = median");
            }
            Some(BinarizePolicy::Fixed(t)) => {
                let _ = writeln!(s, "mask.binarize = {t}");
            }
            None => {}
        }
        let _ = writeln!(s, "mask.width = {}", self.mask_width);
        let _ = writeln!(s, "mask.height = {}", self.mask_height);
        let _ = writeln!(s, "grid.fov = {}", self.grid.fov_w);
        let _ = writeln!(s, "grid.count = {}", self.grid.count);
        let _ = writeln!(s, "grid.stride = {}", self.grid.stride_x);
        let _ = writeln!(s, "grid.columns = {}", self.grid.columns);
        match &self.object.kind {
            PhantomKind::SiemensStar { .. } => {
                let _ = writeln!(s, "object.kind = star");
            }
            PhantomKind::RandomCircle { .. } => {
                let _ = writeln!(s, "object.kind = circle");
            }
            PhantomKind::Constant { .. } => {
                let _ = writeln!(s, "object.kind = constant");
            }
            // disk/delta/raw phantoms are built programmatically, not from
            // configs; the star line keeps the copy parseable
            _ => {
                let _ = writeln!(s, "object.kind = star");
            }
        }
        let _ = writeln!(s, "object.size = {}", self.object.width);
        let _ = writeln!(s, "object.seed = {}", self.object.seed);
        let _ = writeln!(s, "object.lo = {}", self.object.lo);
        let _ = writeln!(s, "object.hi = {}", self.object.hi);
        let _ = writeln!(s, "acquisition.flux = {}", self.flux);
        let _ = writeln!(s, "acquisition.sigma_m = {}", self.sigma_m);
        let _ = writeln!(s, "acquisition.drift = {}", self.drift);
        match &self.solver {
            SolverConfig::AdjointRaw => {
                let _ = writeln!(s, "solver.method = adjoint_raw");
            }
            SolverConfig::AdjointMeanCorrected => {
                let _ = writeln!(s, "solver.method = adjoint");
            }
            SolverConfig::Dgi => {
                let _ = writeln!(s, "solver.method = dgi");
            }
            SolverConfig::Kaczmarz { sweeps, lambda, .. } => {
                let _ = writeln!(s, "solver.method = kaczmarz");
                let _ = writeln!(s, "solver.sweeps = {sweeps}");
                let _ = writeln!(s, "solver.lambda = {lambda}");
            }
            SolverConfig::Landweber { iters, step } => {
                let _ = writeln!(s, "solver.method = landweber");
                let _ = writeln!(s, "solver.iters = {iters}");
                let _ = writeln!(s, "solver.step = {step}");
            }
            SolverConfig::Pinv { tolerance } => {
                let _ = writeln!(s, "solver.method = pinv");
                let _ = writeln!(s, "solver.tolerance = {tolerance}");
            }
        }
        if !self.analyses.is_empty() {
            let _ = writeln!(s, "analysis.metrics = {}", self.analyses.join(","));
        }
        let _ = writeln!(s, "trials = {}", self.trials);
        let join =
            |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let joinu =
            |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "noise.fluxes = {}", join(&self.fluxes));
        let _ = writeln!(s, "misalign.sigmas = {}", join(&self.sigmas));
        let _ = writeln!(s, "dose.total = {}", self.dose_total);
        let _ = writeln!(s, "dose.j_values = {}", joinu(&self.dose_j));
        let _ = writeln!(s, "multiscale.budgets = {}", joinu(&self.budgets));
        let _ = writeln!(s, "multiscale.bin_factors = {}", joinu(&self.bin_factors));
        let _ = writeln!(s, "fabrication.t_max = {}", self.fabrication.t_max);
        let _ = writeln!(s, "fabrication.t_min = {}", self.fabrication.t_min);
        let _ = writeln!(s, "fabrication.center_boost = {}", self.fabrication.center_boost);
        let _ = writeln!(s, "fabrication.slow_variation_rel_sigma = {}", self.fabrication.slow_variation_rel_sigma);
        let _ = writeln!(s, "fabrication.profile_sigma = {}", self.fabrication.profile_sigma);
        s
    }
}
