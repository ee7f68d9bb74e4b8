//! Synthesis and analysis toolkit for classical computational ghost imaging
//! with translated, non-configurable masks.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! 1. [`patterns`] — master-mask generation (Gaussian / uniform / binary /
//!    fractal noise, quadratic-residue MURA tiles), windowed pattern-set
//!    extraction with configurable stride, complements and pixel binning.
//! 2. [`phantoms`] — test objects (resolution star, random circles, deltas).
//! 3. [`forward`] — bucket-measurement simulation under Poisson shot noise,
//!    per-measurement Gaussian noise, slow flux/background drift, translating
//!    beam profiles, pattern misalignment and fabrication defects.
//! 4. [`recon`] — adjoint, differential (DGI), Kaczmarz, Landweber and
//!    truncated-pseudoinverse reconstruction, plus positive/negative
//!    differential-pair recovery.
//! 5. [`analysis`] — PSF/FWHM, Fourier ring correlation, angular power
//!    spectra, SVD metrics (stable rank, condition number), stride
//!    estimators, least-squares perturbation bounds, and the noise / dose
//!    sweep experiments.
//! 6. [`experiment`] + the `ghostmask` binary — config-driven end-to-end
//!    pipelines writing CSV/PGM artifacts with a hashed manifest.
//!
//! All randomness flows from explicit 64-bit seeds; every generator and
//! simulation is a pure function of its arguments.

pub mod analysis;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod forward;
pub mod io;
pub mod linalg;
pub mod patterns;
pub mod phantoms;
pub mod recon;
pub mod seed;

pub use error::{Error, Result};
pub use patterns::{GridSpec, MaskKind, MasterMask, PatternSet};
