//! Plot-ready geometry: confidence ellipses of 2-D Gaussians.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::cholesky_lower;
use crate::niw::{GaussSuffStats, NiwParams};

/// Closed polyline of `(p - mean)^T cov^{-1} (p - mean) = radius^2`; the
/// first point is repeated at the end.
pub fn ellipse(mean: &DVector<f64>, cov: &DMatrix<f64>, radius: f64, points: usize) -> Result<Vec<[f64; 2]>> {
    if mean.len() != 2 || cov.shape() != (2, 2) {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: mean.len(),
        });
    }
    if points < 3 {
        return Err(Error::InvalidParameter("an ellipse needs at least 3 points".into()));
    }
    let l = cholesky_lower(cov, "ellipse covariance")?;
    let mut out = Vec::with_capacity(points + 1);
    for i in 0..points {
        let t = 2.0 * std::f64::consts::PI * i as f64 / points as f64;
        let (s, c) = t.sin_cos();
        let x = mean[0] + radius * l[(0, 0)] * c;
        let y = mean[1] + radius * (l[(1, 0)] * c + l[(1, 1)] * s);
        out.push([x, y]);
    }
    out.push(out[0]);
    Ok(out)
}

/// Posterior mean location and expected covariance of a cluster.
pub fn cluster_gaussian(niw: &NiwParams, stats: &GaussSuffStats) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let post = niw.posterior(stats)?;
    Ok((post.mu0().clone(), post.expected_covariance()))
}
