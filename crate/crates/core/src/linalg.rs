//! Dense SVD via the system LAPACK (`dgesdd`).
//!
//! LAPACK is column-major; we hand it the row-major buffer and interpret the
//! result as the SVD of the transpose, which swaps the roles of U and V.

use ndarray::Array2;
use std::os::raw::c_char;

use crate::error::{Error, Result};

extern "C" {
    fn dgesdd_(
        jobz: *const c_char,
        m: *const i32,
        n: *const i32,
        a: *mut f64,
        lda: *const i32,
        s: *mut f64,
        u: *mut f64,
        ldu: *const i32,
        vt: *mut f64,
        ldvt: *const i32,
        work: *mut f64,
        lwork: *const i32,
        iwork: *mut i32,
        info: *mut i32,
    );
}

fn gesdd(
    jobz: u8,
    m: i32,
    n: i32,
    a: &mut [f64],
    s: &mut [f64],
    u: &mut [f64],
    ldu: i32,
    vt: &mut [f64],
    ldvt: i32,
) -> Result<()> {
    let mut info = 0i32;
    let k = m.min(n) as usize;
    let mut iwork = vec![0i32; 8 * k.max(1)];
    let jobz = jobz as c_char;
    unsafe {
        // workspace query
        let lwork = -1i32;
        let mut wq = [0.0f64];
        dgesdd_(
            &jobz, &m, &n, a.as_mut_ptr(), &m, s.as_mut_ptr(),
            u.as_mut_ptr(), &ldu, vt.as_mut_ptr(), &ldvt,
            wq.as_mut_ptr(), &lwork, iwork.as_mut_ptr(), &mut info,
        );
        if info != 0 {
            return Err(Error::Degenerate(format!("dgesdd workspace query failed (info={info})")));
        }
        let lw = wq[0] as i32;
        let mut work = vec![0.0f64; lw.max(1) as usize];
        dgesdd_(
            &jobz, &m, &n, a.as_mut_ptr(), &m, s.as_mut_ptr(),
            u.as_mut_ptr(), &ldu, vt.as_mut_ptr(), &ldvt,
            work.as_mut_ptr(), &lw, iwork.as_mut_ptr(), &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Degenerate(format!("dgesdd did not converge (info={info})")));
    }
    Ok(())
}

/// Singular values of `a`, descending. Values only, no vectors.
pub fn singular_values(a: &Array2<f64>) -> Result<Vec<f64>> {
    let (r, c) = a.dim();
    if r == 0 || c == 0 {
        return Err(Error::Dimension("empty matrix".into()));
    }
    // Row-major buffer read column-major is the transpose; same singular values.
    let mut buf: Vec<f64> = a.iter().copied().collect();
    let mut s = vec![0.0f64; r.min(c)];
    let mut dummy = [0.0f64];
    gesdd(b'N', c as i32, r as i32, &mut buf, &mut s, &mut dummy, 1, &mut [0.0], 1)?;
    Ok(s)
}

/// Thin SVD: `a = u * diag(s) * vt` with `u: r x k`, `vt: k x c`, `k = min(r, c)`.
pub fn svd_thin(a: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>, Array2<f64>)> {
    let (r, c) = a.dim();
    if r == 0 || c == 0 {
        return Err(Error::Dimension("empty matrix".into()));
    }
    let k = r.min(c);
    let mut buf: Vec<f64> = a.iter().copied().collect();
    let mut s = vec![0.0f64; k];
    // LAPACK sees B = a^T with dims (c, r): B = Ub S VtB, so a = VtB^T S Ub^T.
    // Ub (c x k col-major) read row-major is (k x c) = vt of a.
    // VtB (k x r col-major) read row-major is (r x k) = u of a.
    let mut ub = vec![0.0f64; c * k];
    let mut vtb = vec![0.0f64; k * r];
    gesdd(b'S', c as i32, r as i32, &mut buf, &mut s, &mut ub, c as i32, &mut vtb, k as i32)?;
    let u = Array2::from_shape_vec((r, k), vtb).unwrap();
    let vt = Array2::from_shape_vec((k, c), ub).unwrap();
    Ok((u, s, vt))
}
