//! Ghost-image reconstruction: adjoint, differential (DGI), Kaczmarz,
//! Landweber and truncated pseudoinverse, plus positive/negative
//! differential-pair recovery.
//!
//! Unless noted otherwise, solvers work on the mean-corrected system
//! Ã t = b̃ with Ã_j = A_j − (1/J)Σ_k A_k and b̃_j = b_j − ⟨b⟩, and report
//! the image in mean-corrected units; [`restore_mean`] adds the DGI-style
//! global mean back when images must be comparable to transmission.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::linalg::svd_thin;
use crate::patterns::PatternSet;
use crate::seed;

/// Default guard on J·N² for the dense-SVD pseudoinverse.
pub const PINV_SIZE_CAP: usize = 16_000_000;

/// A reconstructed image plus provenance.
#[derive(Clone, Debug)]
pub struct ReconImage {
    pub values: Array2<f64>,
    /// Solver descriptor, e.g. "kaczmarz(sweeps=4, lambda=0.5)".
    pub method: String,
    /// Binning factor relative to the native FOV.
    pub scale: usize,
}

impl ReconImage {
    pub(crate) fn new(values: Array2<f64>, method: String) -> Self {
        ReconImage { values, method, scale: 1 }
    }
}

/// Solver selection for pipelines that take the method as data.
#[derive(Clone, Debug, PartialEq)]
pub enum SolverConfig {
    AdjointRaw,
    AdjointMeanCorrected,
    Dgi,
    Kaczmarz { sweeps: usize, lambda: f64, order_seed: u64 },
    Landweber { iters: usize, step: f64 },
    Pinv { tolerance: f64 },
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            SolverConfig::Kaczmarz { lambda, .. } => {
                if !(*lambda > 0.0 && *lambda <= 1.0) {
                    return Err(Error::Parameter("kaczmarz lambda must be in (0,1]".into()));
                }
            }
            SolverConfig::Landweber { step, .. } => {
                if *step <= 0.0 {
                    return Err(Error::Parameter("landweber step must be positive".into()));
                }
            }
            SolverConfig::Pinv { tolerance } => {
                if *tolerance < 0.0 {
                    return Err(Error::Parameter("pinv tolerance must be nonnegative".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        match self {
            SolverConfig::AdjointRaw => "adjoint_raw".into(),
            SolverConfig::AdjointMeanCorrected => "adjoint_mean_corrected".into(),
            SolverConfig::Dgi => "dgi".into(),
            SolverConfig::Kaczmarz { sweeps, lambda, .. } => {
                format!("kaczmarz(sweeps={sweeps}, lambda={lambda})")
            }
            SolverConfig::Landweber { iters, step } => {
                format!("landweber(iters={iters}, step={step})")
            }
            SolverConfig::Pinv { tolerance } => format!("pinv(tolerance={tolerance})"),
        }
    }
}

/// Run the solver named by `cfg`.
pub fn solve(set: &PatternSet, buckets: &[f64], cfg: &SolverConfig) -> Result<ReconImage> {
    cfg.validate()?;
    match cfg {
        SolverConfig::AdjointRaw => recon_adjoint(set, buckets, AdjointVariant::Raw),
        SolverConfig::AdjointMeanCorrected => {
            recon_adjoint(set, buckets, AdjointVariant::MeanCorrected)
        }
        SolverConfig::Dgi => recon_dgi(set, buckets),
        SolverConfig::Kaczmarz { sweeps, lambda, order_seed } => {
            recon_kaczmarz(set, buckets, *sweeps, *lambda, *order_seed, None).map(|r| r.image)
        }
        SolverConfig::Landweber { iters, step } => {
            recon_landweber(set, buckets, *iters, *step, None)
        }
        SolverConfig::Pinv { tolerance } => recon_pinv(set, buckets, *tolerance),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjointVariant {
    /// t̂ = Σ_j A_j (b_j − ⟨b⟩)
    Raw,
    /// t̂ = Ã^T b̃
    MeanCorrected,
}

fn check_lengths(set: &PatternSet, buckets: &[f64]) -> Result<()> {
    if buckets.len() != set.len() {
        return Err(Error::Dimension(format!(
            "{} buckets for {} patterns",
            buckets.len(),
            set.len()
        )));
    }
    Ok(())
}

/// Conventional ghost-imaging recovery, a single back projection.
pub fn recon_adjoint(
    set: &PatternSet,
    buckets: &[f64],
    variant: AdjointVariant,
) -> Result<ReconImage> {
    check_lengths(set, buckets)?;
    let mean_b = buckets.iter().sum::<f64>() / buckets.len() as f64;
    let mut out = Array2::zeros(set.fov());
    for (pat, &b) in set.patterns.iter().zip(buckets.iter()) {
        let w = b - mean_b;
        match variant {
            AdjointVariant::Raw => out.scaled_add(w, pat),
            AdjointVariant::MeanCorrected => {
                out.scaled_add(w, pat);
                out.scaled_add(-w, &set.mean_pattern);
            }
        }
    }
    let name = match variant {
        AdjointVariant::Raw => "adjoint_raw",
        AdjointVariant::MeanCorrected => "adjoint_mean_corrected",
    };
    Ok(ReconImage::new(out, name.into()))
}

/// Differential ghost imaging: one Landweber step from the constant global
/// mean μ = Σb / ΣΣA with unit step.
pub fn recon_dgi(set: &PatternSet, buckets: &[f64]) -> Result<ReconImage> {
    check_lengths(set, buckets)?;
    let pattern_sums: Vec<f64> = set.patterns.iter().map(|p| p.sum()).collect();
    let total: f64 = pattern_sums.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("all-zero pattern set".into()));
    }
    let mu = buckets.iter().sum::<f64>() / total;
    let mut out = Array2::from_elem(set.fov(), mu);
    for ((pat, &b), &s) in set.patterns.iter().zip(buckets.iter()).zip(pattern_sums.iter()) {
        out.scaled_add(b - mu * s, pat);
    }
    Ok(ReconImage::new(out, "dgi".into()))
}

/// Landweber iteration t_{k+1} = t_k + step·A^T(b − A t_k) on the raw
/// system, from `initial` (default zero).
pub fn recon_landweber(
    set: &PatternSet,
    buckets: &[f64],
    iters: usize,
    step: f64,
    initial: Option<&Array2<f64>>,
) -> Result<ReconImage> {
    check_lengths(set, buckets)?;
    if step <= 0.0 {
        return Err(Error::Parameter("landweber step must be positive".into()));
    }
    let mut t = match initial {
        Some(img) => {
            if img.dim() != set.fov() {
                return Err(Error::Dimension("initial image dims differ from FOV".into()));
            }
            img.clone()
        }
        None => Array2::zeros(set.fov()),
    };
    for _ in 0..iters {
        let mut grad = Array2::zeros(set.fov());
        for (pat, &b) in set.patterns.iter().zip(buckets.iter()) {
            let pred: f64 = pat.iter().zip(t.iter()).map(|(a, x)| a * x).sum();
            grad.scaled_add(b - pred, pat);
        }
        t.scaled_add(step, &grad);
    }
    Ok(ReconImage::new(t, format!("landweber(iters={iters}, step={step})")))
}

/// Kaczmarz output: image plus the zero-norm-row skip tally.
#[derive(Clone, Debug)]
pub struct KaczmarzResult {
    pub image: ReconImage,
    /// Rows skipped because their mean-corrected norm vanished, summed over
    /// all sweeps.
    pub skipped_rows: usize,
}

/// Randomized Kaczmarz on the mean-corrected system. Each sweep visits all
/// rows once in a freshly shuffled order; zero-norm rows are skipped and
/// tallied. Output stays in mean-corrected units.
pub fn recon_kaczmarz(
    set: &PatternSet,
    buckets: &[f64],
    sweeps: usize,
    lambda: f64,
    order_seed: u64,
    initial: Option<&Array2<f64>>,
) -> Result<KaczmarzResult> {
    check_lengths(set, buckets)?;
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Parameter("kaczmarz lambda must be in (0,1]".into()));
    }
    let mat = set.mean_corrected_matrix();
    let mean_b = buckets.iter().sum::<f64>() / buckets.len() as f64;
    let b: Vec<f64> = buckets.iter().map(|v| v - mean_b).collect();
    let init = match initial {
        Some(img) => {
            if img.dim() != set.fov() {
                return Err(Error::Dimension("initial image dims differ from FOV".into()));
            }
            Some(Array1::from_iter(img.iter().copied()))
        }
        None => None,
    };
    let (t, skipped) = kaczmarz_on_matrix(&mat, &b, sweeps, lambda, order_seed, init.as_ref());
    let (h, w) = set.fov();
    let values = Array2::from_shape_vec((h, w), t.to_vec()).unwrap();
    Ok(KaczmarzResult {
        image: ReconImage::new(values, format!("kaczmarz(sweeps={sweeps}, lambda={lambda})")),
        skipped_rows: skipped,
    })
}

/// Kaczmarz kernel on an explicit row matrix. Exposed so the projection
/// update can be verified against systems built directly (e.g. orthonormal
/// rows), which pattern-set mean correction can never produce.
pub fn kaczmarz_on_matrix(
    mat: &Array2<f64>,
    b: &[f64],
    sweeps: usize,
    lambda: f64,
    order_seed: u64,
    initial: Option<&Array1<f64>>,
) -> (Array1<f64>, usize) {
    let (rows, cols) = mat.dim();
    let norms2: Vec<f64> = (0..rows)
        .map(|i| mat.row(i).iter().map(|v| v * v).sum())
        .collect();
    let mut t = initial.cloned().unwrap_or_else(|| Array1::zeros(cols));
    let mut skipped = 0usize;
    let mut order: Vec<usize> = (0..rows).collect();
    let mut rng = seed::rng(seed::derive(order_seed, "kaczmarz-order"));
    for _ in 0..sweeps {
        order.shuffle(&mut rng);
        for &i in &order {
            if norms2[i] <= 0.0 {
                skipped += 1;
                continue;
            }
            let row = mat.row(i);
            let dot: f64 = row.iter().zip(t.iter()).map(|(a, x)| a * x).sum();
            let coef = lambda * (b[i] - dot) / norms2[i];
            for (x, a) in t.iter_mut().zip(row.iter()) {
                *x += coef * a;
            }
        }
    }
    (t, skipped)
}

/// Minimal-norm solution of the mean-corrected system via truncated SVD.
/// Singular values below `tolerance`·σ₁ are zeroed.
pub fn recon_pinv(set: &PatternSet, buckets: &[f64], tolerance: f64) -> Result<ReconImage> {
    recon_pinv_with_cap(set, buckets, tolerance, PINV_SIZE_CAP)
}

pub fn recon_pinv_with_cap(
    set: &PatternSet,
    buckets: &[f64],
    tolerance: f64,
    cap: usize,
) -> Result<ReconImage> {
    check_lengths(set, buckets)?;
    if tolerance < 0.0 {
        return Err(Error::Parameter("pinv tolerance must be nonnegative".into()));
    }
    let n2 = set.pixel_count();
    if set.len() * n2 > cap {
        return Err(Error::Size(format!(
            "system size {}x{} exceeds the dense-SVD cap {cap}; use the kaczmarz solver",
            set.len(),
            n2
        )));
    }
    let mat = set.mean_corrected_matrix();
    let mean_b = buckets.iter().sum::<f64>() / buckets.len() as f64;
    let bt: Vec<f64> = buckets.iter().map(|v| v - mean_b).collect();
    let (u, s, vt) = svd_thin(&mat)?;
    let cut = tolerance * s.first().copied().unwrap_or(0.0);
    let k = s.len();
    let mut t = Array1::<f64>::zeros(n2);
    for l in 0..k {
        if s[l] <= cut || s[l] == 0.0 {
            continue;
        }
        let ub: f64 = (0..set.len()).map(|j| u[[j, l]] * bt[j]).sum();
        let coef = ub / s[l];
        for c in 0..n2 {
            t[c] += coef * vt[[l, c]];
        }
    }
    let (h, w) = set.fov();
    let values = Array2::from_shape_vec((h, w), t.to_vec()).unwrap();
    Ok(ReconImage::new(values, format!("pinv(tolerance={tolerance})")))
}

/// Differential-pair recovery: runs `inner` on the difference system
/// (A⁺ − A⁻ = 2A⁺ − 1, b⁺ − b⁻).
pub fn recon_differential(
    pos: &PatternSet,
    neg: &PatternSet,
    b_pos: &[f64],
    b_neg: &[f64],
    inner: &SolverConfig,
) -> Result<ReconImage> {
    if pos.len() != neg.len() || pos.fov() != neg.fov() {
        return Err(Error::Pairing("positive/negative sets differ in shape".into()));
    }
    for (p, n) in pos.patterns.iter().zip(neg.patterns.iter()) {
        if p.iter().zip(n.iter()).any(|(a, b)| (a + b - 1.0).abs() > 1e-9) {
            return Err(Error::Pairing("negative set is not the complement of the positive set".into()));
        }
    }
    check_lengths(pos, b_pos)?;
    check_lengths(neg, b_neg)?;
    let diff_patterns: Vec<Array2<f64>> =
        pos.patterns.iter().map(|p| p.mapv(|v| 2.0 * v - 1.0)).collect();
    let diff_set = PatternSet::from_patterns(
        diff_patterns,
        pos.offsets.clone(),
        format!("{} differential", pos.source),
    )?;
    let d: Vec<f64> = b_pos.iter().zip(b_neg.iter()).map(|(p, n)| p - n).collect();
    let mut img = solve(&diff_set, &d, inner)?;
    img.method = format!("differential[{}]", img.method);
    Ok(img)
}

/// Add the DGI-style global mean μ = Σb / ΣΣA back onto a mean-corrected
/// reconstruction so it is comparable to object transmission.
pub fn restore_mean(image: &mut ReconImage, set: &PatternSet, buckets: &[f64]) -> Result<()> {
    let total: f64 = set.patterns.iter().map(|p| p.sum()).sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("all-zero pattern set".into()));
    }
    let mu = buckets.iter().sum::<f64>() / total;
    image.values.mapv_inplace(|v| v + mu);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{measure, AcquisitionModel, ObjectImage};
    use crate::patterns::{complement, unique_pattern_set, MaskKind, MaskParams};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    /// J delta patterns covering every pixel of an n x n FOV.
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

    fn gaussian_set(fov: usize, j: usize, seed: u64) -> PatternSet {
        unique_pattern_set(
            &MaskParams::new(MaskKind::gaussian_default()),
            fov,
            fov,
            j,
            seed,
            None,
        )
        .unwrap()
    }

    #[test]
    fn pinhole_adjoint_recovers_object_minus_mean() {
        let n = 5;
        let set = pinhole_set(n);
        let obj = ObjectImage::new(Array2::from_shape_fn((n, n), |(y, x)| {
            ((3 * y + x) % 7) as f64 / 7.0
        }))
        .unwrap();
        let rec = measure(&set, &obj, &AcquisitionModel::ideal(), 0).unwrap();
        let img = recon_adjoint(&set, &rec.buckets, AdjointVariant::Raw).unwrap().values;
        let mean = obj.values.sum() / (n * n) as f64;
        for (o, r) in obj.values.iter().zip(img.iter()) {
            assert_abs_diff_eq!(o - mean, *r, epsilon = 1e-12);
        }
    }

    #[test]
    fn hand_evaluated_3x3_adjoint() {
        // delta patterns, object = identity diagonal; buckets b_j = t_j,
        // <b> = 1/3, so t̂ = t − 1/3 written out by hand.
        let set = pinhole_set(3);
        let t = Array2::from_shape_fn((3, 3), |(y, x)| if y == x { 1.0 } else { 0.0 });
        let buckets: Vec<f64> = set
            .patterns
            .iter()
            .map(|p| p.iter().zip(t.iter()).map(|(a, v)| a * v).sum())
            .collect();
        let img = recon_adjoint(&set, &buckets, AdjointVariant::Raw).unwrap().values;
        let expect = [
            [2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0],
            [-1.0 / 3.0, 2.0 / 3.0, -1.0 / 3.0],
            [-1.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0],
        ];
        for y in 0..3 {
            for x in 0..3 {
                assert_abs_diff_eq!(img[[y, x]], expect[y][x], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_mean_corrected_ignores_bucket_offsets() {
        let set = gaussian_set(6, 20, 1);
        let mut rng = seed::rng(7);
        let buckets: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..10.0)).collect();
        let shifted: Vec<f64> = buckets.iter().map(|b| b + 123.456).collect();
        let a = recon_adjoint(&set, &buckets, AdjointVariant::MeanCorrected).unwrap().values;
        let b = recon_adjoint(&set, &shifted, AdjointVariant::MeanCorrected).unwrap().values;
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
    }

    #[test]
    fn dgi_reproduces_constant_object() {
        let set = gaussian_set(6, 30, 2);
        let mu0 = 0.37;
        let buckets: Vec<f64> = set.patterns.iter().map(|p| mu0 * p.sum()).collect();
        let img = recon_dgi(&set, &buckets).unwrap().values;
        for v in img.iter() {
            assert_abs_diff_eq!(*v, mu0, epsilon = 1e-10);
        }
    }

    #[test]
    fn dgi_is_one_landweber_step_from_constant_mean() {
        for seed in 0..5u64 {
            let set = gaussian_set(8, 25, 10 + seed);
            let mut rng = seed::rng(seed);
            let buckets: Vec<f64> = (0..25).map(|_| rng.gen_range(0.0..30.0)).collect();
            let dgi = recon_dgi(&set, &buckets).unwrap().values;
            let total: f64 = set.patterns.iter().map(|p| p.sum()).sum();
            let mu = buckets.iter().sum::<f64>() / total;
            let init = Array2::from_elem(set.fov(), mu);
            let lw = recon_landweber(&set, &buckets, 1, 1.0, Some(&init)).unwrap().values;
            for (a, b) in dgi.iter().zip(lw.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn kaczmarz_fixed_point_at_zero() {
        let set = gaussian_set(5, 12, 3);
        // constant representable buckets: b̃ = 0 exactly
        let buckets = vec![4.25; 12];
        let out = recon_kaczmarz(&set, &buckets, 10, 1.0, 0, None).unwrap();
        assert!(out.image.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kaczmarz_matches_pinv_on_consistent_system() {
        let set = gaussian_set(6, 60, 4);
        let t = Array2::from_shape_fn((6, 6), |(y, x)| ((y * 5 + x * 3) % 8) as f64 / 8.0);
        let obj = ObjectImage::new(t).unwrap();
        let rec = measure(&set, &obj, &AcquisitionModel::ideal(), 0).unwrap();
        let kz = recon_kaczmarz(&set, &rec.buckets, 500, 1.0, 7, None).unwrap().image.values;
        let pv = recon_pinv(&set, &rec.buckets, 1e-10).unwrap().values;
        let rms = (kz.iter().zip(pv.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            / kz.len() as f64)
            .sqrt();
        assert!(rms <= 1e-6, "rms = {rms}");
    }

    // For a consistent system each exact projection (λ=1) moves the iterate
    // strictly no farther from any solution, so the distance to the
    // minimal-norm solution is nonincreasing per sweep. The raw residual
    // itself is not monotone in general and is not asserted.
    #[test]
    fn kaczmarz_converges_monotonically_on_consistent_systems() {
        let set = gaussian_set(6, 72, 5);
        let t = Array2::from_shape_fn((6, 6), |(y, x)| ((y + 2 * x) % 5) as f64 / 5.0);
        let obj = ObjectImage::new(t).unwrap();
        let rec = measure(&set, &obj, &AcquisitionModel::ideal(), 0).unwrap();
        let mat = set.mean_corrected_matrix();
        let mean_b = rec.buckets.iter().sum::<f64>() / rec.buckets.len() as f64;
        let b: Vec<f64> = rec.buckets.iter().map(|v| v - mean_b).collect();
        let star: Vec<f64> =
            recon_pinv(&set, &rec.buckets, 1e-10).unwrap().values.iter().copied().collect();
        let dist = |t: &Array1<f64>| -> f64 {
            t.iter().zip(star.iter()).map(|(a, s)| (a - s).powi(2)).sum::<f64>().sqrt()
        };
        let mut state = Array1::zeros(36);
        let mut prev = dist(&state);
        for sweep in 0..20u64 {
            let (next, _) = kaczmarz_on_matrix(&mat, &b, 1, 1.0, 100 + sweep, Some(&state));
            state = next;
            let d = dist(&state);
            assert!(d <= prev * (1.0 + 1e-12), "sweep {sweep}: {d} > {prev}");
            prev = d;
        }
        // and with enough sweeps it actually converges
        let (settled, _) = kaczmarz_on_matrix(&mat, &b, 300, 1.0, 1, Some(&state));
        let norm = star.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(dist(&settled) < 1e-4 * norm, "dist = {}", dist(&settled));
    }

    #[test]
    fn one_sweep_on_orthonormal_rows_is_the_adjoint() {
        // 4 orthonormal rows in R^6 via Gram-Schmidt
        let mut rng = seed::rng(11);
        let mut rows: Vec<Array1<f64>> = Vec::new();
        while rows.len() < 4 {
            let mut v = Array1::from_shape_fn(6, |_| rng.gen_range(-1.0..1.0f64));
            for r in &rows {
                let d = v.dot(r);
                v.scaled_add(-d, r);
            }
            let n = v.dot(&v).sqrt();
            if n > 1e-6 {
                rows.push(v / n);
            }
        }
        let mat = Array2::from_shape_fn((4, 6), |(i, j)| rows[i][j]);
        let b = [0.3, -1.2, 0.7, 2.0];
        let (t, skipped) = kaczmarz_on_matrix(&mat, &b, 1, 1.0, 0, None);
        assert_eq!(skipped, 0);
        let adj = mat.t().dot(&Array1::from_iter(b.iter().copied()));
        for (a, x) in adj.iter().zip(t.iter()) {
            assert_abs_diff_eq!(a, x, epsilon = 1e-12);
        }
    }

    #[test]
    fn kaczmarz_skips_zero_rows() {
        let mut mat = Array2::zeros((3, 4));
        mat[[0, 0]] = 1.0;
        mat[[2, 1]] = 2.0;
        let b = [1.0, 5.0, 4.0];
        let (t, skipped) = kaczmarz_on_matrix(&mat, &b, 2, 1.0, 0, None);
        assert_eq!(skipped, 2); // row 1 skipped in each of 2 sweeps
        assert_abs_diff_eq!(t[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn pinv_of_identity_patterns_returns_corrected_buckets() {
        let set = pinhole_set(4);
        let mut rng = seed::rng(9);
        let buckets: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..1.0)).collect();
        let img = recon_pinv(&set, &buckets, 1e-12).unwrap().values;
        let mean = buckets.iter().sum::<f64>() / 16.0;
        // identity system after mean correction: t̂ = b̃ up to the rank-deficient
        // constant direction, which pinv leaves at minimal norm
        let expect: Vec<f64> = buckets.iter().map(|b| b - mean).collect();
        for (i, v) in img.iter().enumerate() {
            assert_abs_diff_eq!(*v, expect[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn pinv_solves_consistent_overdetermined_system() {
        let set = gaussian_set(4, 20, 6); // 20 patterns, 12 < 16 pixels... use 3x4
        let t = Array2::from_shape_fn((4, 4), |(y, x)| ((y * 3 + x) % 6) as f64 / 6.0);
        let obj = ObjectImage::new(t).unwrap();
        let rec = measure(&set, &obj, &AcquisitionModel::ideal(), 0).unwrap();
        let img = recon_pinv(&set, &rec.buckets, 1e-10).unwrap().values;
        // residual of the mean-corrected system
        let mat = set.mean_corrected_matrix();
        let mean_b = rec.buckets.iter().sum::<f64>() / rec.buckets.len() as f64;
        let flat: Vec<f64> = img.iter().copied().collect();
        let mut res = 0.0f64;
        for i in 0..mat.nrows() {
            let dot: f64 = mat.row(i).iter().zip(flat.iter()).map(|(a, x)| a * x).sum();
            res += (dot - (rec.buckets[i] - mean_b)).powi(2);
        }
        assert!(res.sqrt() <= 1e-10, "residual = {}", res.sqrt());
    }

    #[test]
    fn pinv_cap_rejects_large_systems() {
        let set = gaussian_set(6, 10, 7);
        let buckets = vec![0.0; 10];
        let err = recon_pinv_with_cap(&set, &buckets, 0.0, 100).unwrap_err();
        assert!(format!("{err}").contains("kaczmarz"));
    }

    #[test]
    fn differential_equals_inner_solver_on_difference_system() {
        let pos = gaussian_set(5, 18, 8);
        // complement needs values in [0,1]; gaussian masks satisfy that
        let neg = complement(&pos);
        let t = Array2::from_shape_fn((5, 5), |(y, x)| ((y + x) % 4) as f64 / 4.0);
        let obj = ObjectImage::new(t).unwrap();
        let acq = AcquisitionModel::ideal();
        let bp = measure(&pos, &obj, &acq, 0).unwrap().buckets;
        let bn = measure(&neg, &obj, &acq, 0).unwrap().buckets;
        let inner = SolverConfig::Dgi;
        let via_diff = recon_differential(&pos, &neg, &bp, &bn, &inner).unwrap().values;

        let diff_pats: Vec<Array2<f64>> =
            pos.patterns.iter().map(|p| p.mapv(|v| 2.0 * v - 1.0)).collect();
        let diff_set =
            PatternSet::from_patterns(diff_pats, pos.offsets.clone(), "manual".into()).unwrap();
        let d: Vec<f64> = bp.iter().zip(bn.iter()).map(|(a, b)| a - b).collect();
        let manual = recon_dgi(&diff_set, &d).unwrap().values;
        for (a, b) in via_diff.iter().zip(manual.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12 * a.abs().max(1.0));
        }

        // mismatched pairing is rejected
        let not_comp = gaussian_set(5, 18, 9);
        assert!(recon_differential(&pos, &not_comp, &bp, &bn, &inner).is_err());
    }

    #[test]
    fn adjoint_is_shift_equivariant_on_periodic_sets() {
        use crate::patterns::{extract_pattern_set, gen_mura, GridSpec};
        let m = gen_mura(7).unwrap();
        let set = extract_pattern_set(&m, &GridSpec::square(7, 7, 1)).unwrap();
        let t = Array2::from_shape_fn((7, 7), |(y, x)| ((2 * y + x) % 5) as f64 / 5.0);
        let roll = |img: &Array2<f64>, dy: usize, dx: usize| {
            Array2::from_shape_fn((7, 7), |(y, x)| img[[(y + 7 - dy) % 7, (x + 7 - dx) % 7]])
        };
        let (dy, dx) = (2usize, 3usize);
        let rolled_pats: Vec<Array2<f64>> = set.patterns.iter().map(|p| roll(p, dy, dx)).collect();
        let set2 =
            PatternSet::from_patterns(rolled_pats, set.offsets.clone(), "rolled".into()).unwrap();
        let obj = ObjectImage::new(t.clone()).unwrap();
        let obj2 = ObjectImage::new(roll(&t, dy, dx)).unwrap();
        let acq = AcquisitionModel::ideal();
        let b1 = measure(&set, &obj, &acq, 0).unwrap().buckets;
        let b2 = measure(&set2, &obj2, &acq, 0).unwrap().buckets;
        let r1 = recon_adjoint(&set, &b1, AdjointVariant::MeanCorrected).unwrap().values;
        let r2 = recon_adjoint(&set2, &b2, AdjointVariant::MeanCorrected).unwrap().values;
        let r1_rolled = roll(&r1, dy, dx);
        for (a, b) in r1_rolled.iter().zip(r2.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn restore_mean_adds_dgi_mu() {
        let set = gaussian_set(5, 15, 12);
        let buckets: Vec<f64> = (0..15).map(|i| i as f64).collect();
        let mut img = recon_adjoint(&set, &buckets, AdjointVariant::MeanCorrected).unwrap();
        let before = img.values.clone();
        restore_mean(&mut img, &set, &buckets).unwrap();
        let total: f64 = set.patterns.iter().map(|p| p.sum()).sum();
        let mu = buckets.iter().sum::<f64>() / total;
        for (a, b) in before.iter().zip(img.values.iter()) {
            assert_abs_diff_eq!(a + mu, *b, epsilon = 1e-12);
        }
    }
}
