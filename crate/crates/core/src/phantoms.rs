//! Test objects: resolution (Siemens) star, random circles, simple shapes.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::forward::ObjectImage;
use crate::seed;

/// What to draw. All binary kinds are generated as {0,1} and then remapped
/// to the (lo, hi) transmission levels.
#[derive(Clone, Debug, PartialEq)]
pub enum PhantomKind {
    /// Angular-sector star centered in the FOV.
    SiemensStar { spokes: usize },
    /// One binary circle, radius ~ U(r_min, r_max), center uniform with the
    /// whole circle inside the FOV.
    RandomCircle { r_min: f64, r_max: f64 },
    Disk { cx: f64, cy: f64, r: f64 },
    Delta { x: usize, y: usize },
    Constant { v: f64 },
    /// Pre-built transmission field (e.g. loaded from a file).
    FromValues(Array2<f64>),
}

#[derive(Clone, Debug)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub width: usize,
    pub height: usize,
    /// Transmission levels that {0,1} map to.
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(kind: PhantomKind, width: usize, height: usize, seed: u64) -> Self {
        PhantomSpec { kind, width, height, lo: 0.0, hi: 1.0, seed }
    }

    /// Star with the default 16 spokes.
    pub fn star(size: usize) -> Self {
        PhantomSpec::new(PhantomKind::SiemensStar { spokes: 16 }, size, size, 0)
    }

    /// Circle with default radius range [2, N/4].
    pub fn circle(size: usize, seed: u64) -> Self {
        PhantomSpec::new(
            PhantomKind::RandomCircle { r_min: 2.0, r_max: size as f64 / 4.0 },
            size,
            size,
            seed,
        )
    }

    pub fn levels(mut self, lo: f64, hi: f64) -> Self {
        self.lo = lo;
        self.hi = hi;
        self
    }
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<ObjectImage> {
    if !(0.0..=1.0).contains(&spec.lo) || !(0.0..=1.0).contains(&spec.hi) {
        return Err(Error::Range("levels must lie in [0,1]".into()));
    }
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::Dimension("empty phantom".into()));
    }
    let (w, h) = (spec.width, spec.height);
    let remap = |b: f64| spec.lo + b * (spec.hi - spec.lo);
    let values = match &spec.kind {
        PhantomKind::Constant { v } => {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Range("constant level outside [0,1]".into()));
            }
            Array2::from_elem((h, w), *v)
        }
        PhantomKind::Delta { x, y } => {
            if *x >= w || *y >= h {
                return Err(Error::Range("delta position outside FOV".into()));
            }
            let mut img = Array2::from_elem((h, w), remap(0.0));
            img[[*y, *x]] = remap(1.0);
            img
        }
        PhantomKind::SiemensStar { spokes } => {
            if *spokes == 0 {
                return Err(Error::Parameter("star needs at least one spoke".into()));
            }
            let cx = (w as f64 - 1.0) / 2.0;
            let cy = (h as f64 - 1.0) / 2.0;
            let n = *spokes as f64;
            Array2::from_shape_fn((h, w), |(y, x)| {
                let theta = (y as f64 - cy).atan2(x as f64 - cx);
                // alternate sectors of angular width pi / spokes
                let sector = ((theta + std::f64::consts::PI) * n / std::f64::consts::PI) as i64;
                remap((sector % 2) as f64)
            })
        }
        PhantomKind::Disk { cx, cy, r } => disk(w, h, *cx, *cy, *r, remap),
        PhantomKind::RandomCircle { r_min, r_max } => {
            if !(*r_min <= *r_max) || *r_min < 0.0 {
                return Err(Error::Parameter("need 0 <= r_min <= r_max".into()));
            }
            let mut rng = seed::rng(seed::derive(spec.seed, "phantom-circle"));
            let r = rng.gen_range(*r_min..=*r_max);
            let max_r = (w.min(h) as f64 - 1.0) / 2.0;
            if r > max_r {
                return Err(Error::Parameter("circle radius exceeds FOV".into()));
            }
            let cx = rng.gen_range(r..=(w as f64 - 1.0 - r));
            let cy = rng.gen_range(r..=(h as f64 - 1.0 - r));
            disk(w, h, cx, cy, r, remap)
        }
        PhantomKind::FromValues(vals) => {
            if vals.dim() != (h, w) {
                return Err(Error::Dimension(format!(
                    "phantom data is {:?}, expected ({h}, {w})",
                    vals.dim()
                )));
            }
            vals.clone()
        }
    };
    ObjectImage::new(values)
}

fn disk(w: usize, h: usize, cx: f64, cy: f64, r: f64, remap: impl Fn(f64) -> f64) -> Array2<f64> {
    Array2::from_shape_fn((h, w), |(y, x)| {
        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        remap(if d2 <= r * r { 1.0 } else { 0.0 })
    })
}
