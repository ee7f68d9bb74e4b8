//! Mask-quality metrics: PSF/FWHM, Fourier ring correlation, angular power
//! spectrum, SVD metrics, stride estimators, gradient magnitude, image
//! errors, least-squares perturbation bounds, and the noise/dose sweeps.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{fft2, freq_index};
use crate::forward::{measure, AcquisitionModel, ObjectImage, Recording};
use crate::linalg::singular_values;
use crate::patterns::{extract_pattern_set, GridSpec, MasterMask, PatternSet};
use crate::phantoms::{make_phantom, PhantomKind, PhantomSpec};
use crate::recon::{recon_dgi, solve, ReconImage, SolverConfig, PINV_SIZE_CAP};
use crate::seed;

// ---------------------------------------------------------------------------
// PSF

/// Averaged impulse response of a measure-and-reconstruct pipeline.
#[derive(Clone, Debug)]
pub struct PsfResult {
    /// PSF centered at the FOV center bin.
    pub psf: Array2<f64>,
    pub fwhm_x: f64,
    pub fwhm_y: f64,
    pub method: String,
    pub sample_points: usize,
}

impl PsfResult {
    /// Mean of the x and y widths.
    pub fn fwhm(&self) -> f64 {
        0.5 * (self.fwhm_x + self.fwhm_y)
    }

    /// Energy outside the center bin relative to the squared peak.
    pub fn sidelobe_energy(&self) -> f64 {
        let (h, w) = self.psf.dim();
        let center = self.psf[[h / 2, w / 2]];
        let total: f64 = self.psf.iter().map(|v| v * v).sum();
        (total - center * center) / (center * center)
    }
}

/// Width of `profile` at half its central peak, by linear interpolation of
/// the half-max crossings on each side.
fn fwhm_of_profile(profile: &[f64], peak: usize) -> Result<f64> {
    let top = profile[peak];
    if top <= 0.0 {
        return Err(Error::Degenerate("PSF peak is not positive".into()));
    }
    let half = top / 2.0;
    let cross = |mut i: usize, step: isize| -> f64 {
        loop {
            let next = i as isize + step;
            if next < 0 || next >= profile.len() as isize {
                // never falls below half: width extends to the edge
                return (i as isize - peak as isize).abs() as f64;
            }
            let n = next as usize;
            if profile[n] <= half {
                let frac = (profile[i] - half) / (profile[i] - profile[n]);
                return ((i as isize - peak as isize).abs() as f64) + frac;
            }
            i = n;
        }
    };
    Ok(cross(peak, -1) + cross(peak, 1))
}

/// Average the reconstructed impulse response over `sample_points` delta
/// objects on a uniform pixel subsample, re-centering each reconstruction.
pub fn compute_psf(
    set: &PatternSet,
    acq: &AcquisitionModel,
    solver: &SolverConfig,
    sample_points: usize,
    seed: u64,
) -> Result<PsfResult> {
    let (h, w) = set.fov();
    let n2 = h * w;
    if sample_points == 0 || sample_points > n2 {
        return Err(Error::Parameter(format!(
            "sample_points must be in 1..={n2}"
        )));
    }
    let step = n2.div_ceil(sample_points);
    let (cy, cx) = (h / 2, w / 2);
    let mut acc = Array2::<f64>::zeros((h, w));
    let mut used = 0usize;
    let mut idx = 0usize;
    // With prerecorded noiseless patterns the pinv system matrix is the same
    // for every sample point, so factor it once instead of per point.
    let patterns_fixed = matches!(acq.recording, Recording::Prerecorded)
        && !(acq.characterization_noise && acq.flux.is_finite());
    let mut pinv_factor: Option<(Array2<f64>, Vec<f64>, Array2<f64>)> = None;
    while idx < n2 {
        let (ys, xs) = (idx / w, idx % w);
        let spec = PhantomSpec::new(PhantomKind::Delta { x: xs, y: ys }, w, h, 0);
        let obj = make_phantom(&spec)?;
        let rec = measure(set, &obj, acq, seed::derive_indexed(seed, "psf-point", idx as u64))?;
        let img = match solver {
            SolverConfig::Pinv { tolerance } if patterns_fixed => {
                if pinv_factor.is_none() {
                    pinv_factor = Some(crate::linalg::svd_thin(&set.mean_corrected_matrix())?);
                }
                let (u, s, vt) = pinv_factor.as_ref().unwrap();
                apply_pinv_factor(u, s, vt, &rec.buckets, *tolerance, h, w)
            }
            _ => solve(&rec.recorded_patterns, &rec.buckets, solver),
        }
        .map_err(|e| {
            Error::Solver { index: idx, message: format!("{e}") }
        })?;
        // roll so the impulse position lands on the center bin
        for y in 0..h {
            for x in 0..w {
                let sy = (y + ys + h - cy) % h;
                let sx = (x + xs + w - cx) % w;
                acc[[y, x]] += img.values[[sy, sx]];
            }
        }
        used += 1;
        idx += step;
    }
    acc.mapv_inplace(|v| v / used as f64);
    let row: Vec<f64> = (0..w).map(|x| acc[[cy, x]]).collect();
    let col: Vec<f64> = (0..h).map(|y| acc[[y, cx]]).collect();
    let fwhm_x = fwhm_of_profile(&row, cx)?;
    let fwhm_y = fwhm_of_profile(&col, cy)?;
    Ok(PsfResult { psf: acc, fwhm_x, fwhm_y, method: solver.describe(), sample_points: used })
}

fn apply_pinv_factor(
    u: &Array2<f64>,
    s: &[f64],
    vt: &Array2<f64>,
    buckets: &[f64],
    tolerance: f64,
    h: usize,
    w: usize,
) -> Result<ReconImage> {
    let mean_b = buckets.iter().sum::<f64>() / buckets.len() as f64;
    let cut = tolerance * s.first().copied().unwrap_or(0.0);
    let n2 = h * w;
    let mut t = vec![0.0f64; n2];
    for l in 0..s.len() {
        if s[l] <= cut || s[l] == 0.0 {
            continue;
        }
        let ub: f64 = (0..buckets.len()).map(|j| u[[j, l]] * (buckets[j] - mean_b)).sum();
        let coef = ub / s[l];
        for c in 0..n2 {
            t[c] += coef * vt[[l, c]];
        }
    }
    let values = Array2::from_shape_vec((h, w), t).unwrap();
    Ok(ReconImage::new(values, format!("pinv(tolerance={tolerance})")))
}

// ---------------------------------------------------------------------------
// FRC

#[derive(Clone, Debug)]
pub struct FrcCurve {
    /// Ring center frequencies in cycles/px.
    pub k: Vec<f64>,
    pub frc: Vec<f64>,
    pub n_k: Vec<usize>,
    pub two_sigma: Vec<f64>,
    pub one_bit: Vec<f64>,
    /// Rings where either image had zero energy (frc recorded as 0).
    pub zero_energy: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrcThreshold {
    TwoSigma,
    OneBit,
}

/// Fourier ring correlation over unit-width radial frequency rings.
pub fn frc(a: &Array2<f64>, b: &Array2<f64>) -> Result<FrcCurve> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension("FRC inputs differ in dims".into()));
    }
    let (h, w) = a.dim();
    let fa = fft2(a);
    let fb = fft2(b);
    let rmax = h.min(w) / 2;
    let mut num = vec![Complex64::new(0.0, 0.0); rmax + 1];
    let mut ea = vec![0.0f64; rmax + 1];
    let mut eb = vec![0.0f64; rmax + 1];
    let mut n_k = vec![0usize; rmax + 1];
    for y in 0..h {
        for x in 0..w {
            let ky = freq_index(y, h);
            let kx = freq_index(x, w);
            let r = (kx * kx + ky * ky).sqrt().round() as usize;
            if r == 0 || r > rmax {
                continue;
            }
            num[r] += fa[[y, x]] * fb[[y, x]].conj();
            ea[r] += fa[[y, x]].norm_sqr();
            eb[r] += fb[[y, x]].norm_sqr();
            n_k[r] += 1;
        }
    }
    let n = h.min(w) as f64;
    let mut curve = FrcCurve {
        k: Vec::new(),
        frc: Vec::new(),
        n_k: Vec::new(),
        two_sigma: Vec::new(),
        one_bit: Vec::new(),
        zero_energy: Vec::new(),
    };
    for r in 1..=rmax {
        let nk = n_k[r] as f64;
        curve.k.push(r as f64 / n);
        curve.n_k.push(n_k[r]);
        curve.two_sigma.push(2.0 / (nk / 2.0).sqrt());
        curve.one_bit.push((0.5 + 2.4142 / nk.sqrt()) / (1.5 + 1.4142 / nk.sqrt()));
        if ea[r] <= 0.0 || eb[r] <= 0.0 {
            curve.frc.push(0.0);
            curve.zero_energy.push(true);
        } else {
            curve.frc.push(num[r].re / (ea[r] * eb[r]).sqrt());
            curve.zero_energy.push(false);
        }
    }
    Ok(curve)
}

/// Resolution in px from the first threshold crossing, 1/k_cross with
/// linear interpolation between ring centers; Nyquist (2 px) if the curve
/// never crosses.
pub fn frc_resolution(curve: &FrcCurve, threshold: FrcThreshold) -> Result<f64> {
    if curve.k.is_empty() {
        return Err(Error::Degenerate("empty FRC curve".into()));
    }
    let thr = match threshold {
        FrcThreshold::TwoSigma => &curve.two_sigma,
        FrcThreshold::OneBit => &curve.one_bit,
    };
    // The innermost rings hold so few samples that the threshold can exceed 1,
    // so the crossing search starts at the first ring the curve clears.
    let start = match (0..curve.k.len()).find(|&i| curve.frc[i] >= thr[i]) {
        Some(i) => i,
        None => return Ok(1.0 / curve.k[0]),
    };
    for i in start + 1..curve.k.len() {
        if curve.frc[i] < thr[i] {
            // interpolate where (frc - thr) changes sign
            let d0 = curve.frc[i - 1] - thr[i - 1];
            let d1 = curve.frc[i] - thr[i];
            let frac = d0 / (d0 - d1);
            let k_cross = curve.k[i - 1] + frac * (curve.k[i] - curve.k[i - 1]);
            return Ok(1.0 / k_cross);
        }
    }
    Ok(1.0 / curve.k.last().copied().unwrap().max(0.5))
}

/// Pointwise mean of FRC curves sharing one ring layout.
pub fn frc_mean(curves: &[FrcCurve]) -> Result<FrcCurve> {
    let first = curves.first().ok_or_else(|| Error::Degenerate("no curves".into()))?;
    let mut out = first.clone();
    for c in &curves[1..] {
        if c.k.len() != out.k.len() {
            return Err(Error::Dimension("FRC curves differ in ring count".into()));
        }
        for i in 0..out.frc.len() {
            out.frc[i] += c.frc[i];
        }
    }
    for v in out.frc.iter_mut() {
        *v /= curves.len() as f64;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Angular power spectrum

#[derive(Clone, Debug)]
pub struct Spectrum {
    /// Ring index (cycles per FOV).
    pub k: Vec<f64>,
    /// Ring power normalized so the maximum is 1. Ring values are rescaled
    /// to the ideal annulus population 2πk: the exact lattice counts per
    /// rounded radius fluctuate by ±20% (Gauss circle problem), which would
    /// otherwise bury the spectral peak location in binning noise.
    pub p: Vec<f64>,
    /// Raw |DFT|² sum per ring; Σ energy equals total non-DC power exactly.
    pub energy: Vec<f64>,
    /// Ring sample counts.
    pub n_k: Vec<usize>,
    /// Step-size axis N/(2k) in px.
    pub step: Vec<f64>,
    /// Normalization constant applied to the density-corrected ring values.
    pub norm: f64,
}

/// Angular-averaged power spectrum over unit-width rings, k = 0 excluded,
/// normalized to max 1.
pub fn power_spectrum(image: &Array2<f64>) -> Result<Spectrum> {
    let (h, w) = image.dim();
    if h == 0 || w == 0 {
        return Err(Error::Dimension("empty image".into()));
    }
    let f = fft2(image);
    // rings out to the corner radius so every non-DC bin is counted
    let rmax = ((h as f64 / 2.0).powi(2) + (w as f64 / 2.0).powi(2)).sqrt().round() as usize;
    let mut sums = vec![0.0f64; rmax + 1];
    let mut counts = vec![0usize; rmax + 1];
    for y in 0..h {
        for x in 0..w {
            let ky = freq_index(y, h);
            let kx = freq_index(x, w);
            let r = (kx * kx + ky * ky).sqrt().round() as usize;
            if r == 0 {
                continue;
            }
            sums[r.min(rmax)] += f[[y, x]].norm_sqr();
            counts[r.min(rmax)] += 1;
        }
    }
    let corrected: Vec<f64> = (1..=rmax)
        .map(|r| {
            if counts[r] == 0 {
                0.0
            } else {
                sums[r] * 2.0 * std::f64::consts::PI * r as f64 / counts[r] as f64
            }
        })
        .collect();
    let max = corrected.iter().cloned().fold(0.0f64, f64::max);
    let norm = if max > 0.0 { 1.0 / max } else { 1.0 };
    let n = w as f64;
    let mut spec = Spectrum {
        k: Vec::new(),
        p: Vec::new(),
        energy: Vec::new(),
        n_k: Vec::new(),
        step: Vec::new(),
        norm,
    };
    for r in 1..=rmax {
        spec.k.push(r as f64);
        spec.p.push(corrected[r - 1] * norm);
        spec.energy.push(sums[r]);
        spec.n_k.push(counts[r]);
        spec.step.push(n / (2.0 * r as f64));
    }
    Ok(spec)
}

// ---------------------------------------------------------------------------
// SVD metrics

#[derive(Clone, Debug)]
pub struct SvdReport {
    /// Descending singular values of the mean-corrected pattern matrix.
    pub singular_values: Vec<f64>,
    /// σ/σ₁ sequence.
    pub normalized: Vec<f64>,
    pub stable_rank: f64,
    pub condition_number: f64,
}

/// Σσ²/σ₁² of a descending singular-value sequence.
pub fn stable_rank_of(s: &[f64]) -> Result<f64> {
    let s1 = s.first().copied().unwrap_or(0.0);
    if s1 <= 0.0 {
        return Err(Error::Degenerate("zero matrix has no stable rank".into()));
    }
    Ok(s.iter().map(|v| (v / s1).powi(2)).sum())
}

pub fn svd_metrics(set: &PatternSet) -> Result<SvdReport> {
    if set.len() * set.pixel_count() > PINV_SIZE_CAP {
        return Err(Error::Size(format!(
            "system size {}x{} exceeds the dense-SVD cap",
            set.len(),
            set.pixel_count()
        )));
    }
    let mat = set.mean_corrected_matrix();
    let s = singular_values(&mat)?;
    let s1 = s.first().copied().unwrap_or(0.0);
    let stable_rank = stable_rank_of(&s)?;
    let sn = s.last().copied().unwrap_or(0.0);
    let condition_number = if sn > 0.0 { s1 / sn } else { f64::INFINITY };
    let normalized = s.iter().map(|v| v / s1).collect();
    Ok(SvdReport { singular_values: s, normalized, stable_rank, condition_number })
}

// ---------------------------------------------------------------------------
// Stride estimators

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrideMethod {
    /// Peak of the mask power spectrum mapped to the step-size axis.
    PowerSpectrum,
    /// Knee of the reconstruction NMSE: first stride within 5% of the best.
    Mse,
    /// Stable-rank maximum: first stride within 2% of the best.
    StableRank,
}

#[derive(Clone, Debug)]
pub struct StrideCurve {
    pub strides: Vec<usize>,
    pub score: Vec<f64>,
    pub method: StrideMethod,
    pub recommended: usize,
}

/// Number of patterns used per stride in the scan grids.
fn scan_grid(master: &MasterMask, fov: usize, stride: usize, count: usize) -> Result<GridSpec> {
    let columns = (count as f64).sqrt().ceil() as usize;
    let grid = GridSpec {
        fov_w: fov,
        fov_h: fov,
        count,
        stride_x: stride,
        stride_y: stride,
        columns,
    };
    let _ = master; // feasibility is checked by extract_pattern_set
    Ok(grid)
}

/// Estimate the best extraction stride for `master` with one of the three
/// estimators. `count` patterns are used per stride for the mse and
/// stable-rank methods; `object` is required for mse.
#[allow(clippy::too_many_arguments)]
pub fn stride_scan(
    master: &MasterMask,
    fov: usize,
    strides: &[usize],
    method: StrideMethod,
    count: usize,
    object: Option<&ObjectImage>,
    solver: Option<&SolverConfig>,
    seed: u64,
) -> Result<StrideCurve> {
    if strides.is_empty() || strides.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("strides must be strictly increasing".into()));
    }
    let mut score = Vec::with_capacity(strides.len());
    match method {
        StrideMethod::PowerSpectrum => {
            // one FOV window, spectrum interpolated onto the step-size axis
            let grid = GridSpec { fov_w: fov, fov_h: fov, count: 1, stride_x: 1, stride_y: 1, columns: 1 };
            let window = extract_pattern_set(master, &grid)?;
            let spec = power_spectrum(&window.patterns[0])?;
            for &s in strides {
                score.push(interp_on_step_axis(&spec, s as f64));
            }
        }
        StrideMethod::Mse => {
            let object = object.ok_or_else(|| {
                Error::Parameter("mse stride method requires an object".into())
            })?;
            let default = SolverConfig::AdjointMeanCorrected;
            let solver = solver.unwrap_or(&default);
            for &s in strides {
                let grid = scan_grid(master, fov, s, count)?;
                let set = extract_pattern_set(master, &grid)?;
                let rec = measure(&set, object, &AcquisitionModel::ideal(), seed)?;
                let img = solve(&set, &rec.buckets, solver)?;
                score.push(image_error(&img.values, &object.values, ErrorMetric::Nmse)?);
            }
        }
        StrideMethod::StableRank => {
            for &s in strides {
                let grid = scan_grid(master, fov, s, count)?;
                let set = extract_pattern_set(master, &grid)?;
                score.push(svd_metrics(&set)?.stable_rank);
            }
        }
    }
    let recommended = match method {
        StrideMethod::PowerSpectrum => {
            let best = score.iter().cloned().fold(f64::MIN, f64::max);
            strides[score.iter().position(|&v| v == best).unwrap()]
        }
        StrideMethod::Mse => {
            let best = score.iter().cloned().fold(f64::MAX, f64::min);
            strides[score.iter().position(|&v| v <= best * 1.05).unwrap()]
        }
        StrideMethod::StableRank => {
            let best = score.iter().cloned().fold(f64::MIN, f64::max);
            strides[score.iter().position(|&v| v >= best * 0.98).unwrap()]
        }
    };
    Ok(StrideCurve { strides: strides.to_vec(), score, method, recommended })
}

fn interp_on_step_axis(spec: &Spectrum, step: f64) -> f64 {
    // step axis is decreasing in k; find bracketing rings
    for i in 1..spec.step.len() {
        let (s0, s1) = (spec.step[i - 1], spec.step[i]);
        if step <= s0 && step >= s1 {
            let frac = if s0 == s1 { 0.0 } else { (s0 - step) / (s0 - s1) };
            return spec.p[i - 1] + frac * (spec.p[i] - spec.p[i - 1]);
        }
    }
    if step > spec.step[0] {
        spec.p[0]
    } else {
        *spec.p.last().unwrap()
    }
}

// ---------------------------------------------------------------------------
// Gradient norm

/// ‖∇A‖_F / ‖Ã‖_F over the whole set: forward differences along both axes
/// (one-sided on the last row/column), mean-corrected patterns in the
/// denominator.
pub fn gradient_norm(set: &PatternSet) -> Result<f64> {
    let (h, w) = set.fov();
    let mut num = 0.0f64;
    for pat in &set.patterns {
        for y in 0..h {
            for x in 0..w {
                let dx = if x + 1 < w {
                    pat[[y, x + 1]] - pat[[y, x]]
                } else {
                    pat[[y, x]] - pat[[y, x - 1]]
                };
                let dy = if y + 1 < h {
                    pat[[y + 1, x]] - pat[[y, x]]
                } else {
                    pat[[y, x]] - pat[[y - 1, x]]
                };
                num += dx * dx + dy * dy;
            }
        }
    }
    let mut den = 0.0f64;
    for pat in &set.patterns {
        for ((y, x), v) in pat.indexed_iter() {
            let d = v - set.mean_pattern[[y, x]];
            den += d * d;
        }
    }
    if den <= 0.0 {
        return Err(Error::Degenerate("zero-variance pattern set".into()));
    }
    Ok((num / den).sqrt())
}

// ---------------------------------------------------------------------------
// Image errors

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorMetric {
    /// Mean squared difference of the two images after each is shifted to
    /// zero mean and scaled to unit std.
    Nmse,
    /// Plain root mean square difference.
    Rmse,
}

pub fn image_error(a: &Array2<f64>, b: &Array2<f64>, metric: ErrorMetric) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension("image dims differ".into()));
    }
    let n = a.len() as f64;
    match metric {
        ErrorMetric::Rmse => {
            let s: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum();
            Ok((s / n).sqrt())
        }
        ErrorMetric::Nmse => {
            let norm = |img: &Array2<f64>| -> Result<Vec<f64>> {
                let mean = img.sum() / n;
                let var = img.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                if var <= 0.0 {
                    return Err(Error::Degenerate("zero-variance image under nmse".into()));
                }
                let std = var.sqrt();
                Ok(img.iter().map(|v| (v - mean) / std).collect())
            };
            let na = norm(a)?;
            let nb = norm(b)?;
            let s: f64 = na.iter().zip(nb.iter()).map(|(x, y)| (x - y).powi(2)).sum();
            Ok(s / n)
        }
    }
}

// ---------------------------------------------------------------------------
// Perturbation bound

#[derive(Clone, Debug)]
pub struct BoundReport {
    pub epsilon: f64,
    pub kappa: f64,
    pub sin_theta: f64,
    /// (2κ/cosθ + tanθ·κ²)·ε; meaningful only when `applicable`.
    pub predicted_relative_error: f64,
    pub empirical_relative_error: f64,
    /// Theorem preconditions ε < 1/κ and sinθ < 1 hold.
    pub applicable: bool,
}

/// Least-squares perturbation analysis of the mean-corrected systems.
pub fn perturbation_report(
    set: &PatternSet,
    perturbed: &PatternSet,
    buckets: &[f64],
    perturbed_buckets: &[f64],
) -> Result<BoundReport> {
    if set.fov() != perturbed.fov() || set.len() != perturbed.len() {
        return Err(Error::Dimension("pattern sets differ in shape".into()));
    }
    let mat = set.mean_corrected_matrix();
    let mat_p = perturbed.mean_corrected_matrix();
    let centered = |b: &[f64]| -> Vec<f64> {
        let m = b.iter().sum::<f64>() / b.len() as f64;
        b.iter().map(|v| v - m).collect()
    };
    let b = centered(buckets);
    let bp = centered(perturbed_buckets);

    let s = singular_values(&mat)?;
    let s1 = s.first().copied().unwrap_or(0.0);
    let sn = s.last().copied().unwrap_or(0.0);
    if s1 <= 0.0 {
        return Err(Error::Degenerate("zero pattern matrix".into()));
    }
    let kappa = if sn > 0.0 { s1 / sn } else { f64::INFINITY };

    let diff = &mat_p - &mat;
    let d1 = singular_values(&diff)?.first().copied().unwrap_or(0.0);
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dbnorm = b.iter().zip(bp.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    if bnorm <= 0.0 {
        return Err(Error::Degenerate("zero bucket vector".into()));
    }
    let epsilon = (d1 / s1).max(dbnorm / bnorm);

    let solve_ls = |m: &Array2<f64>, rhs: &[f64]| -> Result<Vec<f64>> {
        let (u, sv, vt) = crate::linalg::svd_thin(m)?;
        let cut = 1e-12 * sv.first().copied().unwrap_or(0.0);
        let mut t = vec![0.0f64; m.ncols()];
        for l in 0..sv.len() {
            if sv[l] <= cut {
                continue;
            }
            let ub: f64 = (0..m.nrows()).map(|i| u[[i, l]] * rhs[i]).sum();
            let coef = ub / sv[l];
            for (c, tv) in t.iter_mut().enumerate() {
                *tv += coef * vt[[l, c]];
            }
        }
        Ok(t)
    };
    let t0 = solve_ls(&mat, &b)?;
    let t1 = solve_ls(&mat_p, &bp)?;
    let tnorm = t0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dtnorm = t0.iter().zip(t1.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let empirical = if tnorm > 0.0 { dtnorm / tnorm } else { 0.0 };

    // residual of the unperturbed LS solution
    let mut rnorm2 = 0.0f64;
    for i in 0..mat.nrows() {
        let dot: f64 = mat.row(i).iter().zip(t0.iter()).map(|(a, x)| a * x).sum();
        rnorm2 += (dot - b[i]).powi(2);
    }
    let sin_theta = (rnorm2.sqrt() / bnorm).min(1.0);
    let cos_theta = (1.0 - sin_theta * sin_theta).max(0.0).sqrt();
    let applicable = kappa.is_finite() && epsilon < 1.0 / kappa && sin_theta < 1.0;
    let predicted = if cos_theta > 0.0 {
        (2.0 * kappa / cos_theta + (sin_theta / cos_theta) * kappa * kappa) * epsilon
    } else {
        f64::INFINITY
    };
    Ok(BoundReport {
        epsilon,
        kappa,
        sin_theta,
        predicted_relative_error: predicted,
        empirical_relative_error: empirical,
        applicable,
    })
}

// ---------------------------------------------------------------------------
// Noise and dose sweeps

#[derive(Clone, Debug)]
pub struct NoiseResolutionRow {
    pub flux: f64,
    pub solver: String,
    /// One-bit FRC resolution in px, averaged over phantoms.
    pub resolution: f64,
}

/// For each flux and solver, reconstructs `n_phantoms` random-circle
/// phantoms, averages the FRC against truth and reports the one-bit
/// resolution.
pub fn noise_resolution_sweep(
    set: &PatternSet,
    fluxes: &[f64],
    n_phantoms: usize,
    solvers: &[SolverConfig],
    seed: u64,
) -> Result<Vec<NoiseResolutionRow>> {
    if n_phantoms == 0 {
        return Err(Error::Parameter("n_phantoms must be at least 1".into()));
    }
    let (h, w) = set.fov();
    let mut rows = Vec::new();
    for &flux in fluxes {
        for solver in solvers {
            let mut curves = Vec::with_capacity(n_phantoms);
            for p in 0..n_phantoms {
                let pseed = seed::derive_indexed(seed, "noise-sweep-phantom", p as u64);
                let obj = make_phantom(&PhantomSpec::circle(w.min(h), pseed))?;
                let acq = AcquisitionModel::ideal().with_flux(flux);
                let rec = measure(set, &obj, &acq, seed::derive_indexed(seed, "noise-sweep-meas", p as u64))?;
                let img = solve(set, &rec.buckets, solver)?;
                curves.push(frc(&img.values, &obj.values)?);
            }
            let mean_curve = frc_mean(&curves)?;
            rows.push(NoiseResolutionRow {
                flux,
                solver: solver.describe(),
                resolution: frc_resolution(&mean_curve, FrcThreshold::OneBit)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct DoseRow {
    pub j: usize,
    pub rmse_total: f64,
    pub rmse_0: f64,
    pub rmse_p: f64,
    pub rmse_m: f64,
    /// sqrt(rmse_0² + rmse_p² + rmse_m²)
    pub quadrature: f64,
}

/// Dose-fractionation sweep: a fixed photon budget `total_dose` per pixel is
/// split over J measurements (Φ = total/J each). Components are estimated
/// empirically: rmse_0 from the noiseless run, rmse_p and rmse_m from
/// single-noise runs with the baseline removed in quadrature. Buckets are
/// rescaled to transmission units before reconstruction (DGI), and the DGI
/// image is affine-calibrated to the object before the RMSE is taken so the
/// one-step gain (which grows with J) does not swamp the comparison.
pub fn dose_sweep(
    master: &MasterMask,
    object: &ObjectImage,
    total_dose: f64,
    j_values: &[usize],
    per_measurement_sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<DoseRow>> {
    if total_dose <= 0.0 {
        return Err(Error::Parameter("total_dose must be positive".into()));
    }
    if trials == 0 {
        return Err(Error::Parameter("trials must be at least 1".into()));
    }
    let (h, w) = object.dims();
    if h != w {
        return Err(Error::Dimension("dose sweep expects a square FOV".into()));
    }
    let fov = w;
    let max_cols = master.width.saturating_sub(fov) + 1;
    let mut rows = Vec::new();
    for &j in j_values {
        let grid = GridSpec { fov_w: fov, fov_h: fov, count: j, stride_x: 1, stride_y: 1, columns: max_cols };
        let set = extract_pattern_set(master, &grid)?;
        let flux = total_dose / j as f64;
        let sigma_t = per_measurement_sigma / flux; // photon sigma in transmission units

        let noiseless = AcquisitionModel::ideal();
        let rec0 = measure(&set, object, &noiseless, seed)?;
        let img0 = recon_dgi(&set, &rec0.buckets)?;
        // one calibration per J, fitted on the noiseless run, so the noise
        // components stay additive in quadrature
        let cal = affine_fit(&img0.values, &object.values)?;
        let rmse_0 = calibrated_rmse(&img0.values, &object.values, cal);

        let mut tot2 = 0.0f64;
        let mut p2 = 0.0f64;
        let mut m2 = 0.0f64;
        for trial in 0..trials {
            let ts = seed::derive_indexed(seed, "dose-trial", (j * 100_000 + trial) as u64);
            let run = |acq: &AcquisitionModel, label: &str, rescale: f64| -> Result<f64> {
                let rec = measure(&set, object, acq, seed::derive(ts, label))?;
                let b: Vec<f64> = rec.buckets.iter().map(|v| v * rescale).collect();
                let img = recon_dgi(&set, &b)?;
                Ok(calibrated_rmse(&img.values, &object.values, cal))
            };
            let both = AcquisitionModel {
                flux,
                per_measurement_sigma,
                ..AcquisitionModel::ideal()
            };
            tot2 += run(&both, "both", 1.0 / flux)?.powi(2);
            let poisson_only = AcquisitionModel::ideal().with_flux(flux);
            p2 += run(&poisson_only, "poisson", 1.0 / flux)?.powi(2);
            let gauss_only = AcquisitionModel {
                per_measurement_sigma: sigma_t,
                ..AcquisitionModel::ideal()
            };
            m2 += run(&gauss_only, "gauss", 1.0)?.powi(2);
        }
        let n = trials as f64;
        let rmse_total = (tot2 / n).sqrt();
        let rmse_p = ((p2 / n) - rmse_0 * rmse_0).max(0.0).sqrt();
        let rmse_m = if per_measurement_sigma > 0.0 {
            ((m2 / n) - rmse_0 * rmse_0).max(0.0).sqrt()
        } else {
            0.0
        };
        let quadrature = (rmse_0 * rmse_0 + rmse_p * rmse_p + rmse_m * rmse_m).sqrt();
        rows.push(DoseRow { j, rmse_total, rmse_0, rmse_p, rmse_m, quadrature });
    }
    Ok(rows)
}

/// Least-squares gain/offset map of `a` onto `b`, as (gain, mean_a, mean_b);
/// apply as gain·(x − mean_a) + mean_b.
fn affine_fit(a: &Array2<f64>, b: &Array2<f64>) -> Result<(f64, f64, f64)> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension("image dims differ".into()));
    }
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let mut cov = 0.0f64;
    let mut var = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        cov += (x - ma) * (y - mb);
        var += (x - ma) * (x - ma);
    }
    let gain = if var > 0.0 { cov / var } else { 0.0 };
    Ok((gain, ma, mb))
}

/// RMSE of `a` against `b` under a fixed affine calibration.
fn calibrated_rmse(a: &Array2<f64>, b: &Array2<f64>, cal: (f64, f64, f64)) -> f64 {
    let (gain, ma, mb) = cal;
    let mut sq = 0.0f64;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let d = gain * (x - ma) + mb - y;
        sq += d * d;
    }
    (sq / a.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::{gen_master, unique_pattern_set, MaskKind, MaskParams};
    use crate::recon::SolverConfig;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn pinhole_set(n: usize) -> PatternSet {
        let mut pats = Vec::new();
        let mut offs = Vec::new();
        for y in 0..n {
            for x in 0..n {
                let mut p = Array2::zeros((n, n));
                p[[y, x]] = 1.0;
                pats.push(p);
                offs.push((x, y));
            }
        }
        PatternSet::from_patterns(pats, offs, "pinhole".into()).unwrap()
    }

    #[test]
    fn psf_of_orthogonal_raw_system_is_a_delta() {
        // pinhole patterns with a single plain back projection give an
        // exactly delta-shaped impulse response
        let set = pinhole_set(7);
        let solver = SolverConfig::Landweber { iters: 1, step: 1.0 };
        let psf = compute_psf(&set, &AcquisitionModel::ideal(), &solver, 49, 0).unwrap();
        assert_abs_diff_eq!(psf.fwhm_x, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(psf.fwhm_y, 1.0, epsilon = 1e-9);
        assert!(psf.sidelobe_energy() <= 1e-6, "sidelobes {}", psf.sidelobe_energy());
        let (h, w) = psf.psf.dim();
        assert_abs_diff_eq!(psf.psf[[h / 2, w / 2]], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn psf_subsampling_matches_full_scan_for_uniform_pipelines() {
        let set = pinhole_set(6);
        let solver = SolverConfig::Landweber { iters: 1, step: 1.0 };
        let full = compute_psf(&set, &AcquisitionModel::ideal(), &solver, 36, 0).unwrap();
        let sub = compute_psf(&set, &AcquisitionModel::ideal(), &solver, 9, 0).unwrap();
        for (a, b) in full.psf.iter().zip(sub.psf.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn frc_of_image_with_itself_is_one() {
        let img = Array2::from_shape_fn((16, 16), |(y, x)| ((y * 5 + x * 3) % 7) as f64);
        let c = frc(&img, &img).unwrap();
        for (i, v) in c.frc.iter().enumerate() {
            if !c.zero_energy[i] {
                assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn frc_is_symmetric_and_scale_invariant() {
        let mut rng = seed::rng(3);
        let a = Array2::from_shape_fn((12, 12), |_| rng.gen_range(-1.0..1.0f64));
        let b = Array2::from_shape_fn((12, 12), |_| rng.gen_range(-1.0..1.0f64));
        let ab = frc(&a, &b).unwrap();
        let ba = frc(&b, &a).unwrap();
        let scaled = frc(&a, &b.mapv(|v| 7.5 * v)).unwrap();
        for i in 0..ab.frc.len() {
            assert_abs_diff_eq!(ab.frc[i], ba.frc[i], epsilon = 1e-12);
            assert_abs_diff_eq!(ab.frc[i], scaled.frc[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn independent_noise_stays_below_two_sigma() {
        let mut below = 0usize;
        let mut total = 0usize;
        for pair in 0..100u64 {
            let mut r1 = seed::rng(seed::derive_indexed(0, "frc-noise-a", pair));
            let mut r2 = seed::rng(seed::derive_indexed(0, "frc-noise-b", pair));
            let a = Array2::from_shape_fn((24, 24), |_| r1.gen_range(-1.0..1.0f64));
            let b = Array2::from_shape_fn((24, 24), |_| r2.gen_range(-1.0..1.0f64));
            let c = frc(&a, &b).unwrap();
            for i in 0..c.frc.len() {
                total += 1;
                if c.frc[i].abs() < c.two_sigma[i] {
                    below += 1;
                }
            }
        }
        let frac = below as f64 / total as f64;
        assert!(frac >= 0.9, "fraction below threshold = {frac}");
    }

    #[test]
    fn frc_resolution_crossings() {
        // synthetic curve on a 47-px ring layout crossing 2σ at k = 0.40
        let img = Array2::from_elem((47, 47), 0.0);
        let mut c = frc(&img.mapv(|_| 1.0), &img.mapv(|_| 1.0)).unwrap();
        for i in 0..c.frc.len() {
            c.frc[i] = 1.0;
        }
        assert_abs_diff_eq!(frc_resolution(&c, FrcThreshold::TwoSigma).unwrap(), 2.0, epsilon = 0.1);
        for i in 0..c.frc.len() {
            // step below threshold exactly past k = 0.40
            c.frc[i] = if c.k[i] < 0.40 { 1.0 } else { c.two_sigma[i] - 0.5 };
        }
        let res = frc_resolution(&c, FrcThreshold::TwoSigma).unwrap();
        assert!((2.4..=2.6).contains(&res), "res = {res}");
    }

    #[test]
    fn spectrum_of_constant_is_zero_and_sinusoid_is_a_single_ring() {
        let c = power_spectrum(&Array2::from_elem((16, 16), 0.7)).unwrap();
        assert!(c.p.iter().all(|&v| v == 0.0));

        let n = 32usize;
        let k0 = 5usize;
        let img = Array2::from_shape_fn((n, n), |(_, x)| {
            (2.0 * std::f64::consts::PI * k0 as f64 * x as f64 / n as f64).cos()
        });
        let s = power_spectrum(&img).unwrap();
        let total: f64 = s.p.iter().sum();
        let at_k0 = s.p[k0 - 1]; // k starts at ring 1
        assert!(at_k0 / total >= 0.99, "ring share {}", at_k0 / total);
    }

    #[test]
    fn spectrum_recovers_total_non_dc_energy() {
        let mut rng = seed::rng(8);
        let img = Array2::from_shape_fn((21, 21), |_| rng.gen_range(0.0..1.0f64));
        let s = power_spectrum(&img).unwrap();
        let recovered: f64 = s.energy.iter().sum();
        let f = fft2(&img);
        let total: f64 =
            f.indexed_iter().filter(|((y, x), _)| !(*y == 0 && *x == 0)).map(|(_, v)| v.norm_sqr()).sum();
        assert_abs_diff_eq!(recovered, total, epsilon = 1e-9 * total);
    }

    #[test]
    fn stable_rank_basics() {
        // equal singular values: stable rank = count
        assert_abs_diff_eq!(stable_rank_of(&[2.0, 2.0, 2.0, 2.0]).unwrap(), 4.0, epsilon = 1e-12);
        // single nonzero singular value: stable rank = 1
        assert_abs_diff_eq!(stable_rank_of(&[5.0, 0.0, 0.0]).unwrap(), 1.0, epsilon = 1e-12);
        assert!(stable_rank_of(&[0.0]).is_err());
    }

    #[test]
    fn pinhole_set_stable_rank_is_j_minus_one() {
        // mean correction of the identity matrix leaves J−1 unit singular
        // values, so the stable rank is exactly J−1
        let set = pinhole_set(4);
        let rep = svd_metrics(&set).unwrap();
        assert_abs_diff_eq!(rep.stable_rank, 15.0, epsilon = 1e-9);
    }

    #[test]
    fn rank_one_set_has_stable_rank_one() {
        let base = Array2::from_shape_fn((5, 5), |(y, x)| ((y * 3 + x) % 4) as f64 / 4.0);
        let set = PatternSet::from_patterns(
            vec![base.clone(), base.mapv(|v| 0.5 * v)],
            vec![(0, 0); 2],
            "rank1".into(),
        )
        .unwrap();
        let rep = svd_metrics(&set).unwrap();
        assert_abs_diff_eq!(rep.stable_rank, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn stable_rank_bounds_and_scale_invariance() {
        for seed_v in 0..5u64 {
            let set = unique_pattern_set(
                &MaskParams::new(MaskKind::gaussian_default()),
                6,
                6,
                20,
                seed_v,
                None,
            )
            .unwrap();
            let rep = svd_metrics(&set).unwrap();
            assert!(rep.stable_rank >= 1.0 && rep.stable_rank <= 20.0);
            let scaled = PatternSet::from_patterns(
                set.patterns.iter().map(|p| p.mapv(|v| 0.3 * v)).collect(),
                set.offsets.clone(),
                "scaled".into(),
            )
            .unwrap();
            let rep2 = svd_metrics(&scaled).unwrap();
            assert_abs_diff_eq!(rep.stable_rank, rep2.stable_rank, epsilon = 1e-9);
        }
    }

    #[test]
    fn stride_method1_finds_half_period_of_a_sinusoid() {
        // master = sinusoid of period 8 along x: spectrum is one ring at
        // k = fov/8, so the step-size peak sits at 4 px
        let fov = 48usize;
        let vals = Array2::from_shape_fn((64, 64), |(_, x)| {
            0.5 + 0.5 * (2.0 * std::f64::consts::PI * x as f64 / 8.0).cos()
        });
        let base = gen_master(&MaskParams::new(MaskKind::Uniform), 64, 64, 0).unwrap();
        let master = MasterMask { values: vals, ..base };
        let strides: Vec<usize> = (1..=8).collect();
        let curve = stride_scan(
            &master,
            fov,
            &strides,
            StrideMethod::PowerSpectrum,
            1,
            None,
            None,
            0,
        )
        .unwrap();
        assert_eq!(curve.recommended, 4);
    }

    #[test]
    fn stride_mse_requires_object() {
        let master = gen_master(&MaskParams::new(MaskKind::Binary), 40, 40, 1).unwrap();
        let err = stride_scan(&master, 12, &[1, 2], StrideMethod::Mse, 36, None, None, 0);
        assert!(err.is_err());
    }

    #[test]
    fn gradient_norm_checkerboard_oracle() {
        let n = 8usize;
        let checker = Array2::from_shape_fn((n, n), |(y, x)| ((y + x) % 2) as f64);
        let inverse = checker.mapv(|v| 1.0 - v);
        let set = PatternSet::from_patterns(
            vec![checker.clone(), inverse.clone()],
            vec![(0, 0); 2],
            "checker".into(),
        )
        .unwrap();
        // direct summation oracle
        let mut num = 0.0;
        for pat in [&checker, &inverse] {
            for y in 0..n {
                for x in 0..n {
                    let dx = if x + 1 < n { pat[[y, x + 1]] - pat[[y, x]] } else { pat[[y, x]] - pat[[y, x - 1]] };
                    let dy = if y + 1 < n { pat[[y + 1, x]] - pat[[y, x]] } else { pat[[y, x]] - pat[[y - 1, x]] };
                    num += dx * dx + dy * dy;
                }
            }
        }
        let den = 2.0 * (n * n) as f64 * 0.25;
        let expect = (num / den).sqrt();
        assert_abs_diff_eq!(gradient_norm(&set).unwrap(), expect, epsilon = 1e-12);
        // constant patterns are degenerate
        let flat = PatternSet::from_patterns(
            vec![Array2::from_elem((4, 4), 0.5); 3],
            vec![(0, 0); 3],
            "flat".into(),
        )
        .unwrap();
        assert!(gradient_norm(&flat).is_err());
    }

    #[test]
    fn image_error_basics() {
        let a = Array2::from_shape_fn((6, 6), |(y, x)| ((y * 2 + x) % 5) as f64);
        assert_abs_diff_eq!(image_error(&a, &a, ErrorMetric::Rmse).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(image_error(&a, &a, ErrorMetric::Nmse).unwrap(), 0.0, epsilon = 1e-15);
        // nmse is invariant to positive affine maps
        let b = a.mapv(|v| 3.0 * v - 7.0);
        assert_abs_diff_eq!(image_error(&a, &b, ErrorMetric::Nmse).unwrap(), 0.0, epsilon = 1e-12);
        // rmse of constants differing by delta
        let c = Array2::from_elem((6, 6), 0.25);
        let d = Array2::from_elem((6, 6), 0.75);
        assert_abs_diff_eq!(image_error(&c, &d, ErrorMetric::Rmse).unwrap(), 0.5, epsilon = 1e-12);
        assert!(image_error(&c, &d, ErrorMetric::Nmse).is_err());
    }

    #[test]
    fn unperturbed_bound_report_is_zero() {
        let set = unique_pattern_set(
            &MaskParams::new(MaskKind::gaussian_default()),
            4,
            3,
            30,
            5,
            None,
        )
        .unwrap();
        let mut rng = seed::rng(2);
        let b: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..5.0)).collect();
        let rep = perturbation_report(&set, &set, &b, &b).unwrap();
        assert_eq!(rep.epsilon, 0.0);
        assert_eq!(rep.empirical_relative_error, 0.0);
        assert!(rep.applicable);
        assert!(rep.predicted_relative_error.abs() < 1e-12);
    }

    #[test]
    fn bound_holds_over_monte_carlo_trials() {
        // consistent overdetermined system with small perturbations
        let set = unique_pattern_set(
            &MaskParams::new(MaskKind::gaussian_default()),
            4,
            3,
            30,
            6,
            None,
        )
        .unwrap();
        let t = Array2::from_shape_fn((3, 4), |(y, x)| ((y * 2 + x) % 5) as f64 / 5.0);
        let obj = ObjectImage::new(t).unwrap();
        let b = measure(&set, &obj, &AcquisitionModel::ideal(), 0).unwrap().buckets;
        let mut checked = 0usize;
        for trial in 0..20u64 {
            let mut rng = seed::rng(seed::derive_indexed(0, "bound-trial", trial));
            let pert: Vec<Array2<f64>> = set
                .patterns
                .iter()
                .map(|p| p.mapv(|v| (v + rng.gen_range(-1e-4..1e-4)).clamp(0.0, 1.0)))
                .collect();
            let pset =
                PatternSet::from_patterns(pert, set.offsets.clone(), "pert".into()).unwrap();
            let bp = measure(&pset, &obj, &AcquisitionModel::ideal(), 0).unwrap().buckets;
            let rep = perturbation_report(&set, &pset, &b, &bp).unwrap();
            if rep.applicable {
                checked += 1;
                assert!(
                    rep.empirical_relative_error <= rep.predicted_relative_error,
                    "trial {trial}: {} > {}",
                    rep.empirical_relative_error,
                    rep.predicted_relative_error
                );
            }
        }
        assert!(checked > 10, "too few applicable trials: {checked}");
    }

    #[test]
    fn kappa_of_orthonormal_like_rows_is_one() {
        let set = pinhole_set(3);
        let rep = svd_metrics(&set).unwrap();
        // after mean correction one direction collapses; the nonzero part is flat
        assert_abs_diff_eq!(rep.singular_values[0], rep.singular_values[7], epsilon = 1e-10);
    }

    #[test]
    fn dose_sweep_smoke() {
        let master = gen_master(&MaskParams::new(MaskKind::Binary), 24, 24, 2).unwrap();
        let obj = make_phantom(&PhantomSpec::circle(12, 3)).unwrap();
        let rows = dose_sweep(&master, &obj, 1000.0, &[16, 64], 0.0, 2, 0).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!(r.rmse_total.is_finite() && r.rmse_total >= 0.0);
            assert_eq!(r.rmse_m, 0.0);
        }
    }
}
