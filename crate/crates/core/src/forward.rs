//! Bucket-measurement simulation.
//!
//! The ideal bucket is the correlation of the illumination pattern with the
//! object transmission, B_j = Σ_xy A_j(x,y)·t(x,y). Degradations are layered
//! on top: multiplicative flux drift, additive background drift, a
//! translating Gaussian beam profile, Poisson shot noise at a given photon
//! flux, and per-measurement Gaussian detector noise. Pattern misalignment
//! and fabrication defects perturb the patterns themselves.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::fft::gaussian_blur_periodic;
use crate::patterns::{MasterMask, PatternSet};
use crate::seed;

/// Object transmission field, t(x,y) in [0,1].
#[derive(Clone, Debug)]
pub struct ObjectImage {
    pub values: Array2<f64>,
}

impl ObjectImage {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Range("object transmission outside [0,1]".into()));
        }
        Ok(ObjectImage { values })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Translating Gaussian beam profile.
#[derive(Clone, Copy, Debug)]
pub struct BeamModel {
    /// Profile width in pixels.
    pub sigma_profile: f64,
    /// Per-axis std of the per-measurement beam-center jitter, pixels.
    pub jitter_sigma: f64,
}

/// Whether recorded patterns include the per-measurement degradations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recording {
    /// Patterns are characterized together with each bucket, so they carry
    /// the same drift/beam factors the bucket saw.
    Simultaneous,
    /// Patterns were characterized once, beforehand; the reconstructor sees
    /// the ideal patterns even when the buckets drifted.
    Prerecorded,
}

/// Pair acquisition schedule for differential measurements.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairSchedule {
    /// Each positive/negative pair is measured back to back and shares one
    /// drift state.
    Adjacent,
    /// All positives first, then all negatives; members of a pair see
    /// unrelated drift states.
    Separated,
}

/// Acquisition degradation model. `flux = f64::INFINITY` disables shot
/// noise; buckets are then reported in pattern units instead of photons.
#[derive(Clone, Copy, Debug)]
pub struct AcquisitionModel {
    /// Photons per pixel per measurement.
    pub flux: f64,
    /// Std of Gaussian noise added to each bucket (photon units).
    pub per_measurement_sigma: f64,
    /// Relative std of the slow multiplicative flux drift.
    pub flux_drift_rel_sigma: f64,
    /// Std of the slow additive background, relative to the mean ideal bucket.
    pub background_rel_sigma: f64,
    pub beam: Option<BeamModel>,
    pub recording: Recording,
    /// Poisson-resample the recorded patterns at `flux` photons/pixel.
    pub characterization_noise: bool,
}

impl AcquisitionModel {
    /// Noiseless, drift-free acquisition with prerecorded patterns.
    pub fn ideal() -> Self {
        AcquisitionModel {
            flux: f64::INFINITY,
            per_measurement_sigma: 0.0,
            flux_drift_rel_sigma: 0.0,
            background_rel_sigma: 0.0,
            beam: None,
            recording: Recording::Prerecorded,
            characterization_noise: false,
        }
    }

    pub fn with_flux(mut self, flux: f64) -> Self {
        self.flux = flux;
        self
    }

    pub fn with_drift(mut self, rel_sigma: f64) -> Self {
        self.flux_drift_rel_sigma = rel_sigma;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.flux > 0.0) {
            return Err(Error::Parameter("flux must be positive".into()));
        }
        if self.per_measurement_sigma < 0.0
            || self.flux_drift_rel_sigma < 0.0
            || self.background_rel_sigma < 0.0
            || self.beam.map_or(false, |b| b.sigma_profile <= 0.0 || b.jitter_sigma < 0.0)
        {
            return Err(Error::Parameter("noise sigmas must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-measurement degradation state, kept for diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct DriftState {
    pub flux_factor: f64,
    pub background: f64,
    pub beam_dx: f64,
    pub beam_dy: f64,
}

/// One acquisition run: buckets plus the patterns as the reconstructor
/// knows them.
#[derive(Clone, Debug)]
pub struct MeasurementRecord {
    pub buckets: Vec<f64>,
    pub recorded_patterns: PatternSet,
    pub true_drift: Vec<DriftState>,
    pub seed: u64,
}

/// Random per-pattern misalignment.
#[derive(Clone, Copy, Debug)]
pub struct MisalignmentModel {
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// Value used for samples falling outside the pattern.
    pub boundary_fill: f64,
}

impl MisalignmentModel {
    pub fn isotropic(sigma: f64) -> Self {
        MisalignmentModel { sigma_x: sigma, sigma_y: sigma, boundary_fill: 0.5 }
    }
}

/// Fabrication-defect model for binary masks.
#[derive(Clone, Copy, Debug)]
pub struct FabricationModel {
    pub t_max: f64,
    pub t_min: f64,
    /// Relative transmission increase at the wafer center.
    pub center_boost: f64,
    /// Relative std of the smooth random transmission variation.
    pub slow_variation_rel_sigma: f64,
    /// Width of the radial profile, pixels.
    pub profile_sigma: f64,
}

impl FabricationModel {
    /// The characterized defect model: 85%/5% plateaus, 8% center boost,
    /// 2% smooth variation.
    pub fn typical(profile_sigma: f64) -> Self {
        FabricationModel {
            t_max: 0.85,
            t_min: 0.05,
            center_boost: 0.08,
            slow_variation_rel_sigma: 0.02,
            profile_sigma,
        }
    }
}

/// Slowly varying multiplicative factors with mean 1 and sample std
/// `rel_sigma`: white Gaussian noise smoothed by a circular moving average
/// of width max(J/20, 5), then affinely renormalized.
pub fn drift_series(j: usize, rel_sigma: f64, seed: u64) -> Vec<f64> {
    if rel_sigma == 0.0 || j == 0 {
        return vec![1.0; j];
    }
    let mut rng = seed::rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let white: Vec<f64> = (0..j).map(|_| normal.sample(&mut rng)).collect();
    let w = (j / 20).max(5).min(j);
    let mut smooth = vec![0.0; j];
    let half = w / 2;
    for i in 0..j {
        let mut acc = 0.0;
        for k in 0..w {
            let idx = (i + j + k - half) % j;
            acc += white[idx];
        }
        smooth[i] = acc / w as f64;
    }
    let mean = smooth.iter().sum::<f64>() / j as f64;
    let var = smooth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / j as f64;
    let std = var.sqrt();
    if std == 0.0 {
        return vec![1.0; j];
    }
    smooth.iter().map(|v| 1.0 + (v - mean) * rel_sigma / std).collect()
}

fn sample_poisson(rng: &mut impl Rng, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    Poisson::new(lambda).unwrap().sample(rng)
}

/// Gaussian beam profile centered at the FOV center plus (dx, dy).
fn beam_profile(h: usize, w: usize, beam: &BeamModel, dx: f64, dy: f64) -> Array2<f64> {
    let cy = (h as f64 - 1.0) / 2.0 + dy;
    let cx = (w as f64 - 1.0) / 2.0 + dx;
    let s2 = 2.0 * beam.sigma_profile * beam.sigma_profile;
    Array2::from_shape_fn((h, w), |(y, x)| {
        let ry = y as f64 - cy;
        let rx = x as f64 - cx;
        (-(rx * rx + ry * ry) / s2).exp()
    })
}

/// Internal: measure with an externally supplied drift/background schedule,
/// so paired acquisitions can share states. `slot[j]` selects the row of
/// `states` used by measurement j.
fn measure_with_states(
    set: &PatternSet,
    object: &ObjectImage,
    acq: &AcquisitionModel,
    states: &[DriftState],
    slots: &[usize],
    seed: u64,
) -> Result<MeasurementRecord> {
    acq.validate()?;
    if set.fov() != object.dims() {
        return Err(Error::Dimension("pattern and object dimensions differ".into()));
    }
    let (h, w) = set.fov();
    let j_total = set.len();
    let mut buckets = Vec::with_capacity(j_total);
    let mut recorded = Vec::with_capacity(j_total);
    let mut true_drift = Vec::with_capacity(j_total);

    for jj in 0..j_total {
        let st = states[slots[jj]];
        let mut illum = set.patterns[jj].mapv(|v| v * st.flux_factor);
        if let Some(beam) = &acq.beam {
            let prof = beam_profile(h, w, beam, st.beam_dx, st.beam_dy);
            illum = &illum * &prof;
        }
        let ideal: f64 = illum
            .iter()
            .zip(object.values.iter())
            .map(|(a, t)| a * t)
            .sum::<f64>()
            + st.background;

        let mut rng = seed::rng(seed::derive_indexed(seed, "bucket", jj as u64));
        let mut b = if acq.flux.is_finite() {
            sample_poisson(&mut rng, acq.flux * ideal)
        } else {
            ideal
        };
        if acq.per_measurement_sigma > 0.0 {
            b += Normal::new(0.0, acq.per_measurement_sigma).unwrap().sample(&mut rng);
        }
        buckets.push(b);

        let mut pat = match acq.recording {
            Recording::Prerecorded => set.patterns[jj].clone(),
            Recording::Simultaneous => illum,
        };
        if acq.characterization_noise && acq.flux.is_finite() {
            let mut crng = seed::rng(seed::derive_indexed(seed, "characterize", jj as u64));
            pat.mapv_inplace(|v| sample_poisson(&mut crng, acq.flux * v) / acq.flux);
        }
        recorded.push(pat);
        true_drift.push(st);
    }

    let recorded_patterns =
        PatternSet::from_patterns(recorded, set.offsets.clone(), set.source.clone())?;
    Ok(MeasurementRecord { buckets, recorded_patterns, true_drift, seed })
}

fn drift_states(
    count: usize,
    acq: &AcquisitionModel,
    mean_ideal_bucket: f64,
    seed: u64,
) -> Vec<DriftState> {
    let flux = drift_series(count, acq.flux_drift_rel_sigma, seed::derive(seed, "flux-drift"));
    let background: Vec<f64> = if acq.background_rel_sigma > 0.0 {
        drift_series(count, acq.background_rel_sigma, seed::derive(seed, "background"))
            .iter()
            .map(|f| (f - 1.0) * mean_ideal_bucket)
            .collect()
    } else {
        vec![0.0; count]
    };
    let mut states = Vec::with_capacity(count);
    for i in 0..count {
        let (dx, dy) = match &acq.beam {
            Some(beam) if beam.jitter_sigma > 0.0 => {
                let mut rng = seed::rng(seed::derive_indexed(seed, "beam", i as u64));
                let n = Normal::new(0.0, beam.jitter_sigma).unwrap();
                (n.sample(&mut rng), n.sample(&mut rng))
            }
            _ => (0.0, 0.0),
        };
        states.push(DriftState {
            flux_factor: flux[i],
            background: background[i],
            beam_dx: dx,
            beam_dy: dy,
        });
    }
    states
}

fn mean_ideal_bucket(set: &PatternSet, object: &ObjectImage) -> f64 {
    set.mean_pattern
        .iter()
        .zip(object.values.iter())
        .map(|(a, t)| a * t)
        .sum()
}

/// Simulate one acquisition run of `set` against `object`.
///
/// Ideal bucket: B_j = Σ_xy f_j·A_j·P_j·t + g_j with flux factor f_j, beam
/// profile P_j and background g_j. With finite flux the reported bucket is a
/// Poisson(flux·B_j) draw in photon units; `per_measurement_sigma` adds
/// Gaussian noise on top.
pub fn measure(
    set: &PatternSet,
    object: &ObjectImage,
    acq: &AcquisitionModel,
    seed: u64,
) -> Result<MeasurementRecord> {
    acq.validate()?;
    let states = drift_states(set.len(), acq, mean_ideal_bucket(set, object), seed);
    let slots: Vec<usize> = (0..set.len()).collect();
    measure_with_states(set, object, acq, &states, &slots, seed)
}

/// Measure a positive/negative pattern pair sequence.
///
/// `Adjacent` gives both members of pair j the same drift state (they are
/// measured back to back); `Separated` measures all positives first, so the
/// members of a pair see unrelated drift.
pub fn measure_pairs(
    pos: &PatternSet,
    neg: &PatternSet,
    object: &ObjectImage,
    acq: &AcquisitionModel,
    schedule: PairSchedule,
    seed: u64,
) -> Result<(MeasurementRecord, MeasurementRecord)> {
    if pos.len() != neg.len() || pos.fov() != neg.fov() {
        return Err(Error::Pairing("positive/negative sets differ in shape".into()));
    }
    let jp = pos.len();
    // One shared timeline of 2J drift states covers both schedules.
    let states = drift_states(2 * jp, acq, mean_ideal_bucket(pos, object), seed);
    let (pos_slots, neg_slots): (Vec<usize>, Vec<usize>) = match schedule {
        PairSchedule::Adjacent => ((0..jp).map(|j| 2 * j).collect(), (0..jp).map(|j| 2 * j).collect()),
        PairSchedule::Separated => ((0..jp).collect(), (jp..2 * jp).collect()),
    };
    let rec_pos = measure_with_states(
        pos,
        object,
        acq,
        &states,
        &pos_slots,
        seed::derive(seed, "pair-pos"),
    )?;
    let rec_neg = measure_with_states(
        neg,
        object,
        acq,
        &states,
        &neg_slots,
        seed::derive(seed, "pair-neg"),
    )?;
    Ok((rec_pos, rec_neg))
}

/// b⁺_j − b⁻_j for a measured pair.
pub fn differential_buckets(pos: &MeasurementRecord, neg: &MeasurementRecord) -> Vec<f64> {
    pos.buckets.iter().zip(neg.buckets.iter()).map(|(p, n)| p - n).collect()
}

/// Sample `img` at (x − dx, y − dy) with bilinear interpolation; samples
/// outside the image take `fill`. The output is a convex combination of
/// input values and `fill`.
pub fn shift_bilinear(img: &Array2<f64>, dx: f64, dy: f64, fill: f64) -> Array2<f64> {
    let (h, w) = img.dim();
    let at = |x: i64, y: i64| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            fill
        } else {
            img[[y as usize, x as usize]]
        }
    };
    Array2::from_shape_fn((h, w), |(y, x)| {
        let sx = x as f64 - dx;
        let sy = y as f64 - dy;
        let x0 = sx.floor();
        let y0 = sy.floor();
        let fx = sx - x0;
        let fy = sy - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        at(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + at(x0 + 1, y0) * fx * (1.0 - fy)
            + at(x0, y0 + 1) * (1.0 - fx) * fy
            + at(x0 + 1, y0 + 1) * fx * fy
    })
}

/// Shift every pattern by an independent N(0, σ²) offset per axis.
pub fn perturb_alignment(set: &PatternSet, model: &MisalignmentModel, seed: u64) -> PatternSet {
    if model.sigma_x == 0.0 && model.sigma_y == 0.0 {
        return set.clone();
    }
    let shifted: Vec<Array2<f64>> = set
        .patterns
        .iter()
        .enumerate()
        .map(|(j, pat)| {
            let mut rng = seed::rng(seed::derive_indexed(seed, "misalign", j as u64));
            let dx = if model.sigma_x > 0.0 {
                Normal::new(0.0, model.sigma_x).unwrap().sample(&mut rng)
            } else {
                0.0
            };
            let dy = if model.sigma_y > 0.0 {
                Normal::new(0.0, model.sigma_y).unwrap().sample(&mut rng)
            } else {
                0.0
            };
            shift_bilinear(pat, dx, dy, model.boundary_fill)
        })
        .collect();
    PatternSet::from_patterns(shifted, set.offsets.clone(), format!("{} misaligned", set.source))
        .expect("shape preserved")
}

/// Turn an ideal binary master into a fabricated transmission field:
/// 1 → t_max and 0 → t_min, a radial profile rising to (1 + center_boost)
/// at the center, and a smooth multiplicative random field with relative
/// std `slow_variation_rel_sigma`. Clamped to [0,1].
pub fn apply_fabrication(
    master: &MasterMask,
    fab: &FabricationModel,
    seed: u64,
) -> Result<MasterMask> {
    if !(0.0..=1.0).contains(&fab.t_min)
        || !(0.0..=1.0).contains(&fab.t_max)
        || fab.t_min >= fab.t_max
    {
        return Err(Error::Parameter("need 0 <= t_min < t_max <= 1".into()));
    }
    if !master.is_binary() {
        return Err(Error::Precondition("fabrication model requires a binary master".into()));
    }
    let (h, w) = master.values.dim();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    // Profile pinned to (1 + boost) at the center and 1 at the nearest edge.
    let r_edge = cx.min(cy);
    let g = |r: f64| (-(r * r) / (2.0 * fab.profile_sigma * fab.profile_sigma)).exp();
    let g_edge = g(r_edge);

    let variation = if fab.slow_variation_rel_sigma > 0.0 {
        let mut rng = seed::rng(seed::derive(seed, "fabrication-variation"));
        let normal = Normal::new(0.0, 1.0).unwrap();
        let white = Array2::from_shape_fn((h, w), |_| normal.sample(&mut rng));
        let smooth = gaussian_blur_periodic(&white, (h.min(w) as f64 / 8.0).max(1.0));
        let mean = smooth.sum() / (h * w) as f64;
        let std = (smooth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (h * w) as f64).sqrt();
        smooth.mapv(|v| 1.0 + (v - mean) * fab.slow_variation_rel_sigma / std.max(1e-300))
    } else {
        Array2::from_elem((h, w), 1.0)
    };

    let values = Array2::from_shape_fn((h, w), |(y, x)| {
        let base = if master.values[[y, x]] > 0.5 { fab.t_max } else { fab.t_min };
        let r = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
        let profile = if g_edge < 1.0 {
            1.0 + fab.center_boost * (g(r) - g_edge) / (1.0 - g_edge)
        } else {
            1.0 + fab.center_boost
        };
        (base * profile * variation[[y, x]]).clamp(0.0, 1.0)
    });

    Ok(MasterMask {
        width: w,
        height: h,
        values,
        params: master.params.clone(),
        seed,
        periodic: master.periodic,
    })
}
