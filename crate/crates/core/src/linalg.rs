//! Small dense helpers on top of nalgebra: jittered Cholesky, log-determinants
//! and allocation-free quadratic forms.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower Cholesky factor of a symmetric matrix.
///
/// If the plain factorization fails the matrix is retried once with
/// `1e-9 * trace / d` added to its diagonal.
pub fn cholesky_lower(a: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if let Some(c) = a.clone().cholesky() {
        return Ok(c.unpack());
    }
    let d = a.nrows();
    let trace = a.trace();
    if !(trace.is_finite() && trace > 0.0) {
        return Err(Error::NotPositiveDefinite(what));
    }
    let mut jittered = a.clone();
    let jitter = 1e-9 * trace / d as f64;
    for i in 0..d {
        jittered[(i, i)] += jitter;
    }
    jittered
        .cholesky()
        .map(|c| c.unpack())
        .ok_or(Error::NotPositiveDefinite(what))
}

/// log|A| from the lower Cholesky factor of A.
pub fn log_det_from_chol(l: &DMatrix<f64>) -> f64 {
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

pub fn log_det_spd(a: &DMatrix<f64>, what: &'static str) -> Result<f64> {
    Ok(log_det_from_chol(&cholesky_lower(a, what)?))
}

/// Returns `|L^{-1} (x - mu)|^2` using forward substitution. `scratch` must have
/// length `d`; no allocation takes place.
pub fn mahalanobis_sq(l: &DMatrix<f64>, x: &[f64], mu: &[f64], scratch: &mut [f64]) -> f64 {
    let d = l.nrows();
    debug_assert_eq!(x.len(), d);
    debug_assert_eq!(scratch.len(), d);
    let data = l.as_slice(); // column-major
    let mut total = 0.0;
    for i in 0..d {
        let mut v = x[i] - mu[i];
        for j in 0..i {
            v -= data[j * d + i] * scratch[j];
        }
        let y = v / data[i * d + i];
        scratch[i] = y;
        total += y * y;
    }
    total
}

/// Makes `m` exactly symmetric by averaging it with its transpose.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `x x^T` scaled by `c`, added in place.
pub fn add_outer(m: &mut DMatrix<f64>, x: &DVector<f64>, c: f64) {
    let d = x.len();
    for j in 0..d {
        let xj = c * x[j];
        for i in 0..d {
            m[(i, j)] += x[i] * xj;
        }
    }
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}
