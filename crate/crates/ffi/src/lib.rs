//! C ABI for the ghostmask core: opaque handles, integer status codes, and
//! caller-owned output buffers. The matching header lives in
//! `include/ghostmask.h`.
//!
//! Conventions:
//! - every function returns a `GmStatus`; results come back through out
//!   pointers;
//! - handles are created by `gm_*_new`-style constructors and released with
//!   the matching `gm_*_free`; freeing NULL is a no-op;
//! - the last error message is kept per thread and read with
//!   `gm_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ghostmask::analysis::{image_error, ErrorMetric};
use ghostmask::forward::{measure, AcquisitionModel, ObjectImage};
use ghostmask::patterns::{
    extract_pattern_set, gen_master, gen_mura, GridSpec, MaskKind, MaskParams, MasterMask,
    PatternSet,
};
use ghostmask::phantoms::{make_phantom, PhantomSpec};
use ghostmask::recon::{solve, SolverConfig};
use ghostmask::Error;

/// Status codes mirrored in the C header.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum GmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Range = 4,
    Degenerate = 5,
    TooLarge = 6,
    Solver = 7,
    Io = 8,
    Internal = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.to_string());
}

fn status_of(err: &Error) -> GmStatus {
    match err {
        Error::Parameter(_) | Error::Validation(_) | Error::Config { .. } => {
            GmStatus::InvalidArgument
        }
        Error::Dimension(_) | Error::Pairing(_) => GmStatus::Dimension,
        Error::Range(_) => GmStatus::Range,
        Error::Degenerate(_) | Error::Precondition(_) => GmStatus::Degenerate,
        Error::Size(_) => GmStatus::TooLarge,
        Error::Solver { .. } => GmStatus::Solver,
        Error::Io(_) | Error::Format(_) => GmStatus::Io,
    }
}

fn fail(err: Error) -> GmStatus {
    let code = status_of(&err);
    set_error(&err.to_string());
    code
}

/// Runs `f`, converting panics into `Internal` instead of unwinding across
/// the FFI boundary.
fn guarded(f: impl FnOnce() -> GmStatus) -> GmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            GmStatus::Internal
        }
    }
}

macro_rules! nonnull {
    ($p:expr) => {
        if $p.is_null() {
            set_error(concat!("null pointer: ", stringify!($p)));
            return GmStatus::NullPointer;
        }
    };
}

/// Copies the last error message for this thread into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to at least `cap` writable bytes (or be NULL with cap 0).
#[no_mangle]
pub unsafe extern "C" fn gm_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

// ---------------------------------------------------------------------------
// master masks

/// Opaque master mask handle.
pub struct GmMaster(MasterMask);

/// Mask families exposed through the C API.
#[repr(C)]
#[derive(Clone, Copy)]
pub enum GmMaskKind {
    Gaussian = 0,
    Uniform = 1,
    Binary = 2,
    Fractal = 3,
    Mura = 4,
}

/// Generates a master mask.
///
/// `param1`/`param2` depend on the kind: gaussian uses (mu, sigma), fractal
/// uses (alpha, beta), mura uses param1 as the prime modulus (width/height
/// ignored), others ignore both. `blur_sigma > 0` applies a periodic
/// Gaussian blur; `binarize_median != 0` re-binarizes at the median.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gm_master_generate(
    kind: GmMaskKind,
    width: usize,
    height: usize,
    seed: u64,
    param1: c_double,
    param2: c_double,
    blur_sigma: c_double,
    binarize_median: c_int,
    out: *mut *mut GmMaster,
) -> GmStatus {
    guarded(|| {
        nonnull!(out);
        let result = (|| {
            if let GmMaskKind::Mura = kind {
                return gen_mura(param1 as u32);
            }
            let base = match kind {
                GmMaskKind::Gaussian => MaskKind::Gaussian { mu: param1, sigma: param2 },
                GmMaskKind::Uniform => MaskKind::Uniform,
                GmMaskKind::Binary => MaskKind::Binary,
                GmMaskKind::Fractal => MaskKind::Fractal { alpha: param1, beta: param2 },
                GmMaskKind::Mura => unreachable!(),
            };
            let mut params = MaskParams::new(base);
            if blur_sigma > 0.0 {
                params = params.with_blur(blur_sigma);
            }
            if binarize_median != 0 {
                params = params
                    .with_binarize(ghostmask::patterns::BinarizePolicy::Median);
            }
            gen_master(&params, width, height, seed)
        })();
        match result {
            Ok(m) => {
                *out = Box::into_raw(Box::new(GmMaster(m)));
                GmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `m` must be a handle from this library or NULL.
#[no_mangle]
pub unsafe extern "C" fn gm_master_free(m: *mut GmMaster) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gm_master_dims(
    m: *const GmMaster,
    width: *mut usize,
    height: *mut usize,
) -> GmStatus {
    guarded(|| {
        nonnull!(m);
        nonnull!(width);
        nonnull!(height);
        *width = (*m).0.width;
        *height = (*m).0.height;
        GmStatus::Ok
    })
}

/// Copies the mask transmission field (row-major) into `buf`.
///
/// # Safety
/// `buf` must hold at least width*height doubles.
#[no_mangle]
pub unsafe extern "C" fn gm_master_values(
    m: *const GmMaster,
    buf: *mut c_double,
    len: usize,
) -> GmStatus {
    guarded(|| {
        nonnull!(m);
        nonnull!(buf);
        let v = &(*m).0.values;
        if len < v.len() {
            set_error("buffer too small for mask values");
            return GmStatus::InvalidArgument;
        }
        for (i, &x) in v.iter().enumerate() {
            *buf.add(i) = x;
        }
        GmStatus::Ok
    })
}

// ---------------------------------------------------------------------------
// pattern sets

/// Opaque pattern-set handle.
pub struct GmPatternSet(PatternSet);

/// Extracts a scanning pattern set from a master mask.
///
/// # Safety
/// `m` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gm_pattern_set_extract(
    m: *const GmMaster,
    fov: usize,
    count: usize,
    stride: usize,
    columns: usize,
    out: *mut *mut GmPatternSet,
) -> GmStatus {
    guarded(|| {
        nonnull!(m);
        nonnull!(out);
        let grid = GridSpec {
            fov_w: fov,
            fov_h: fov,
            count,
            stride_x: stride,
            stride_y: stride,
            columns,
        };
        match extract_pattern_set(&(*m).0, &grid) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(GmPatternSet(s)));
                GmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `s` must be a handle from this library or NULL.
#[no_mangle]
pub unsafe extern "C" fn gm_pattern_set_free(s: *mut GmPatternSet) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gm_pattern_set_len(
    s: *const GmPatternSet,
    len: *mut usize,
) -> GmStatus {
    guarded(|| {
        nonnull!(s);
        nonnull!(len);
        *len = (*s).0.len();
        GmStatus::Ok
    })
}

// ---------------------------------------------------------------------------
// objects

/// Opaque test-object handle.
pub struct GmObject(ObjectImage);

/// Built-in phantom families.
#[repr(C)]
#[derive(Clone, Copy)]
pub enum GmPhantomKind {
    SiemensStar = 0,
    RandomCircle = 1,
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gm_object_phantom(
    kind: GmPhantomKind,
    size: usize,
    seed: u64,
    out: *mut *mut GmObject,
) -> GmStatus {
    guarded(|| {
        nonnull!(out);
        let spec = match kind {
            GmPhantomKind::SiemensStar => PhantomSpec::star(size),
            GmPhantomKind::RandomCircle => PhantomSpec::circle(size, seed),
        };
        match make_phantom(&spec) {
            Ok(o) => {
                *out = Box::into_raw(Box::new(GmObject(o)));
                GmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `o` must be a handle from this library or NULL.
#[no_mangle]
pub unsafe extern "C" fn gm_object_free(o: *mut GmObject) {
    if !o.is_null() {
        drop(Box::from_raw(o));
    }
}

// ---------------------------------------------------------------------------
// measurement and reconstruction

/// Simulates bucket measurements. `flux <= 0` disables shot noise.
///
/// # Safety
/// `buckets` must hold at least `gm_pattern_set_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gm_measure(
    s: *const GmPatternSet,
    o: *const GmObject,
    flux: c_double,
    sigma_m: c_double,
    drift_rel_sigma: c_double,
    seed: u64,
    buckets: *mut c_double,
    len: usize,
) -> GmStatus {
    guarded(|| {
        nonnull!(s);
        nonnull!(o);
        nonnull!(buckets);
        let set = &(*s).0;
        if len < set.len() {
            set_error("bucket buffer too small");
            return GmStatus::InvalidArgument;
        }
        let mut acq = AcquisitionModel::ideal();
        if flux > 0.0 {
            acq = acq.with_flux(flux);
        }
        acq.per_measurement_sigma = sigma_m;
        if drift_rel_sigma > 0.0 {
            acq = acq.with_drift(drift_rel_sigma);
        }
        match measure(set, &(*o).0, &acq, seed) {
            Ok(rec) => {
                for (i, &b) in rec.buckets.iter().enumerate() {
                    *buckets.add(i) = b;
                }
                GmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Reconstruction methods exposed through the C API.
#[repr(C)]
#[derive(Clone, Copy)]
pub enum GmSolver {
    AdjointRaw = 0,
    Adjoint = 1,
    Dgi = 2,
    Kaczmarz = 3,
    Landweber = 4,
    Pinv = 5,
}

/// Reconstructs an image; writes FOV² doubles (row-major) into `image`.
///
/// `param1`/`param2`: kaczmarz (sweeps, lambda), landweber (iters, step),
/// pinv (tolerance, unused); others ignore both.
///
/// # Safety
/// `buckets` holds `n_buckets` doubles; `image` holds at least FOV² doubles.
#[no_mangle]
pub unsafe extern "C" fn gm_solve(
    s: *const GmPatternSet,
    buckets: *const c_double,
    n_buckets: usize,
    solver: GmSolver,
    param1: c_double,
    param2: c_double,
    image: *mut c_double,
    image_len: usize,
) -> GmStatus {
    guarded(|| {
        nonnull!(s);
        nonnull!(buckets);
        nonnull!(image);
        let set = &(*s).0;
        if image_len < set.pixel_count() {
            set_error("image buffer too small");
            return GmStatus::InvalidArgument;
        }
        let b = std::slice::from_raw_parts(buckets, n_buckets);
        let cfg = match solver {
            GmSolver::AdjointRaw => SolverConfig::AdjointRaw,
            GmSolver::Adjoint => SolverConfig::AdjointMeanCorrected,
            GmSolver::Dgi => SolverConfig::Dgi,
            GmSolver::Kaczmarz => SolverConfig::Kaczmarz {
                sweeps: param1 as usize,
                lambda: param2,
                order_seed: 0,
            },
            GmSolver::Landweber => SolverConfig::Landweber {
                iters: param1 as usize,
                step: param2,
            },
            GmSolver::Pinv => SolverConfig::Pinv { tolerance: param1 },
        };
        match solve(set, b, &cfg) {
            Ok(img) => {
                for (i, &x) in img.values.iter().enumerate() {
                    *image.add(i) = x;
                }
                GmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// NMSE (affine-invariant, both images standardized) between an image buffer
/// and an object.
///
/// # Safety
/// `image` holds width*height doubles matching the object's dims.
#[no_mangle]
pub unsafe extern "C" fn gm_nmse(
    image: *const c_double,
    o: *const GmObject,
    out: *mut c_double,
) -> GmStatus {
    guarded(|| {
        nonnull!(image);
        nonnull!(o);
        nonnull!(out);
        let (h, w) = (*o).0.dims();
        let buf = std::slice::from_raw_parts(image, h * w);
        let arr = match ndarray::Array2::from_shape_vec((h, w), buf.to_vec()) {
            Ok(a) => a,
            Err(_) => {
                set_error("image buffer shape mismatch");
                return GmStatus::Dimension;
            }
        };
        match image_error(&arr, &(*o).0.values, ErrorMetric::Nmse) {
            Ok(v) => {
                *out = v;
                GmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn full_round_trip_through_the_c_api() {
        unsafe {
            let mut master: *mut GmMaster = ptr::null_mut();
            assert!(
                gm_master_generate(GmMaskKind::Binary, 40, 40, 7, 0.0, 0.0, 0.0, 0, &mut master)
                    == GmStatus::Ok
            );
            let (mut w, mut h) = (0usize, 0usize);
            assert!(gm_master_dims(master, &mut w, &mut h) == GmStatus::Ok);
            assert_eq!((w, h), (40, 40));

            let mut set: *mut GmPatternSet = ptr::null_mut();
            assert!(
                gm_pattern_set_extract(master, 12, 256, 1, 16, &mut set) == GmStatus::Ok
            );
            let mut j = 0usize;
            assert!(gm_pattern_set_len(set, &mut j) == GmStatus::Ok);
            assert_eq!(j, 256);

            let mut obj: *mut GmObject = ptr::null_mut();
            assert!(
                gm_object_phantom(GmPhantomKind::SiemensStar, 12, 0, &mut obj) == GmStatus::Ok
            );

            let mut buckets = vec![0.0f64; 256];
            assert!(
                gm_measure(set, obj, 0.0, 0.0, 0.0, 1, buckets.as_mut_ptr(), 256)
                    == GmStatus::Ok
            );
            let mut image = vec![0.0f64; 144];
            assert!(
                gm_solve(
                    set,
                    buckets.as_ptr(),
                    256,
                    GmSolver::Kaczmarz,
                    8.0,
                    0.5,
                    image.as_mut_ptr(),
                    144
                ) == GmStatus::Ok
            );
            let mut nmse = f64::NAN;
            assert!(gm_nmse(image.as_ptr(), obj, &mut nmse) == GmStatus::Ok);
            assert!(nmse.is_finite() && nmse < 0.5, "nmse {nmse}");

            gm_object_free(obj);
            gm_pattern_set_free(set);
            gm_master_free(master);
        }
    }

    #[test]
    fn errors_set_code_and_message() {
        unsafe {
            let mut master: *mut GmMaster = ptr::null_mut();
            // 48 is not prime
            let st = gm_master_generate(
                GmMaskKind::Mura,
                0,
                0,
                0,
                48.0,
                0.0,
                0.0,
                0,
                &mut master,
            );
            assert!(st == GmStatus::InvalidArgument);
            let mut buf = [0i8; 128];
            let n = gm_last_error(buf.as_mut_ptr(), buf.len());
            assert!(n > 0);
            let msg = std::ffi::CStr::from_ptr(buf.as_ptr()).to_string_lossy();
            assert!(msg.contains("prime"), "{msg}");

            // null out pointer
            assert!(
                gm_master_generate(
                    GmMaskKind::Binary,
                    8,
                    8,
                    0,
                    0.0,
                    0.0,
                    0.0,
                    0,
                    ptr::null_mut()
                ) == GmStatus::NullPointer
            );
        }
    }
}
