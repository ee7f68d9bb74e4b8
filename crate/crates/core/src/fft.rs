//! 2D DFT helpers on top of rustfft, plus periodic Gaussian blur.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

/// Forward 2D DFT (unnormalized, matching the usual DFT convention).
pub fn fft2(img: &Array2<f64>) -> Array2<Complex64> {
    let data = img.mapv(|v| Complex64::new(v, 0.0));
    fft2_complex(&data, false)
}

/// Inverse 2D DFT with 1/(w*h) normalization, real part.
pub fn ifft2_real(spec: &Array2<Complex64>) -> Array2<f64> {
    let (h, w) = spec.dim();
    let out = fft2_complex(spec, true);
    let norm = 1.0 / (h * w) as f64;
    out.mapv(|v| v.re * norm)
}

fn fft2_complex(data: &Array2<Complex64>, inverse: bool) -> Array2<Complex64> {
    let (h, w) = data.dim();
    let mut planner = FftPlanner::new();
    let fft_row = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    let fft_col = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };

    let mut out = data.clone();
    for mut row in out.rows_mut() {
        let mut buf: Vec<Complex64> = row.iter().copied().collect();
        fft_row.process(&mut buf);
        for (d, s) in row.iter_mut().zip(buf.iter()) {
            *d = *s;
        }
    }
    for mut col in out.columns_mut() {
        let mut buf: Vec<Complex64> = col.iter().copied().collect();
        fft_col.process(&mut buf);
        for (d, s) in col.iter_mut().zip(buf.iter()) {
            *d = *s;
        }
    }
    out
}

/// Signed frequency index for bin `i` of an `n`-point DFT.
pub fn freq_index(i: usize, n: usize) -> f64 {
    if i <= n / 2 { i as f64 } else { i as f64 - n as f64 }
}

/// Periodic (wrap-around) convolution with a normalized Gaussian kernel.
pub fn gaussian_blur_periodic(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let (h, w) = img.dim();
    let spec = fft2(img);
    // Build the sampled periodic kernel explicitly so the discrete
    // normalization is exact.
    let mut kernel = Array2::zeros((h, w));
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let dy = freq_index(y, h);
            let dx = freq_index(x, w);
            let v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            kernel[[y, x]] = v;
            total += v;
        }
    }
    kernel.mapv_inplace(|v| v / total);
    let kspec = fft2(&kernel);
    let prod = ndarray::Zip::from(&spec).and(&kspec).map_collect(|a, b| a * b);
    ifft2_real(&prod)
}
