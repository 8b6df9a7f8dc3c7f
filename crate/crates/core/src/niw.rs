//! Conjugate Normal x Inverse-Wishart data model.
//!
//! Inverse-Wishart convention used throughout the crate:
//!
//! ```text
//! p(Sigma) ∝ |Sigma0|^{m/2} |Sigma|^{-(m+d+1)/2} exp(-tr(Sigma0 Sigma^{-1}) / 2)
//! ```
//!
//! so `E[Sigma] = Sigma0 / (m - d - 1)`. Cluster summaries keep the scatter
//! matrix `sum (x_i - mean)(x_i - mean)^T` rather than the covariance, which
//! keeps every formula defined at `n = 1`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add_outer, cholesky_lower, log_det_from_chol, mahalanobis_sq, symmetrize};

const LN_PI: f64 = 1.144_729_885_849_400_2;

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// log of the multivariate gamma function
/// `Gamma_d(a) = pi^{d(d-1)/4} prod_{i=1..d} Gamma(a + (1 - i)/2)`.
pub fn log_mvgamma(d: usize, a: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::param("multivariate gamma needs d >= 1"));
    }
    if !(a > (d as f64 - 1.0) / 2.0) {
        return Err(Error::param(format!(
            "multivariate gamma domain: need a > (d-1)/2, got d={d}, a={a}"
        )));
    }
    let df = d as f64;
    let mut acc = df * (df - 1.0) / 4.0 * LN_PI;
    for i in 1..=d {
        acc += ln_gamma(a + (1.0 - i as f64) / 2.0);
    }
    Ok(acc)
}

/// Count, mean and scatter matrix of a multiset of d-vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "RawSuffStats", try_from = "RawSuffStats")]
pub struct GaussSuffStats {
    n: usize,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl GaussSuffStats {
    pub fn empty(d: usize) -> Self {
        Self {
            n: 0,
            mean: DVector::zeros(d),
            scatter: DMatrix::zeros(d, d),
        }
    }

    /// Two-pass batch computation.
    pub fn from_samples<'a, I>(d: usize, samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a DVector<f64>>,
    {
        let xs: Vec<&DVector<f64>> = samples.into_iter().collect();
        let mut mean = DVector::zeros(d);
        for x in &xs {
            check_dim(d, x.len())?;
            mean += *x;
        }
        if xs.is_empty() {
            return Ok(Self::empty(d));
        }
        mean /= xs.len() as f64;
        let mut scatter = DMatrix::zeros(d, d);
        for x in &xs {
            let dev = *x - &mean;
            add_outer(&mut scatter, &dev, 1.0);
        }
        symmetrize(&mut scatter);
        Ok(Self {
            n: xs.len(),
            mean,
            scatter,
        })
    }

    /// Builds stats from raw parts. The scatter must be square and match the mean.
    pub fn from_parts(n: usize, mean: DVector<f64>, scatter: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if scatter.nrows() != d || scatter.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: scatter.nrows(),
            });
        }
        if n == 0 && (mean.iter().any(|v| *v != 0.0) || scatter.iter().any(|v| *v != 0.0)) {
            return Err(Error::input("empty stats must have zero mean and scatter"));
        }
        Ok(Self { n, mean, scatter })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn scatter(&self) -> &DMatrix<f64> {
        &self.scatter
    }

    /// Unbiased sample covariance `scatter / (n - 1)`; `None` below two samples.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        (self.n >= 2).then(|| &self.scatter / (self.n as f64 - 1.0))
    }

    /// Folds `x` in with the mean-shift (Welford) update.
    pub fn push(&mut self, x: &DVector<f64>) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        let n1 = self.n as f64 + 1.0;
        let delta = x - &self.mean;
        add_outer(&mut self.scatter, &delta, (n1 - 1.0) / n1);
        self.mean.axpy(1.0 / n1, &delta, 1.0);
        self.n += 1;
        Ok(())
    }

    /// Exact inverse of [`push`](Self::push) for a sample that was previously added.
    pub fn pop(&mut self, x: &DVector<f64>) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        if self.n == 0 {
            return Err(Error::EmptyStats);
        }
        if self.n == 1 {
            *self = Self::empty(self.dim());
            return Ok(());
        }
        let n = self.n as f64;
        // mean of the remaining n-1 samples
        let mut rest = &self.mean * n - x;
        rest /= n - 1.0;
        let delta = x - &rest;
        add_outer(&mut self.scatter, &delta, -(n - 1.0) / n);
        symmetrize(&mut self.scatter);
        self.mean = rest;
        self.n -= 1;
        Ok(())
    }

    pub fn added(&self, x: &DVector<f64>) -> Result<Self> {
        let mut s = self.clone();
        s.push(x)?;
        Ok(s)
    }

    pub fn removed(&self, x: &DVector<f64>) -> Result<Self> {
        let mut s = self.clone();
        s.pop(x)?;
        Ok(s)
    }

    /// Stats of the concatenation of both sample sets.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        if other.n == 0 {
            return Ok(self.clone());
        }
        if self.n == 0 {
            return Ok(other.clone());
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        let mean = &self.mean + &delta * (nb / n);
        let mut scatter = &self.scatter + &other.scatter;
        add_outer(&mut scatter, &delta, na * nb / n);
        symmetrize(&mut scatter);
        Ok(Self {
            n: self.n + other.n,
            mean,
            scatter,
        })
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RawSuffStats {
    n: usize,
    mean: Vec<f64>,
    /// row-major d x d
    scatter: Vec<f64>,
}

impl From<GaussSuffStats> for RawSuffStats {
    fn from(s: GaussSuffStats) -> Self {
        Self {
            n: s.n,
            scatter: row_major(&s.scatter),
            mean: s.mean.iter().copied().collect(),
        }
    }
}

impl TryFrom<RawSuffStats> for GaussSuffStats {
    type Error = Error;

    fn try_from(r: RawSuffStats) -> Result<Self> {
        let d = r.mean.len();
        let scatter = matrix_from_row_major(d, &r.scatter)?;
        GaussSuffStats::from_parts(r.n, DVector::from_vec(r.mean), scatter)
    }
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub fn matrix_from_row_major(d: usize, values: &[f64]) -> Result<DMatrix<f64>> {
    if values.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            got: values.len(),
        });
    }
    Ok(DMatrix::from_row_slice(d, d, values))
}

/// Hyperparameters `(mu0, kappa, Sigma0, m)` of the Normal x Inverse-Wishart base distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "RawNiw", try_from = "RawNiw")]
pub struct NiwParams {
    mu0: DVector<f64>,
    kappa: f64,
    sigma0: DMatrix<f64>,
    m: f64,
}

impl NiwParams {
    /// Validates `kappa > 0`, `m > d + 1` and that `sigma0` is positive definite.
    pub fn new(mu0: DVector<f64>, kappa: f64, sigma0: DMatrix<f64>, m: f64) -> Result<Self> {
        let d = mu0.len();
        if d == 0 {
            return Err(Error::param("dimension must be at least 1"));
        }
        check_dim(d, sigma0.nrows())?;
        check_dim(d, sigma0.ncols())?;
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::param(format!("kappa must be positive, got {kappa}")));
        }
        if !(m > d as f64 + 1.0 && m.is_finite()) {
            return Err(Error::param(format!("m must exceed d + 1 = {}, got {m}", d + 1)));
        }
        if mu0.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("mu0 must be finite"));
        }
        if sigma0.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("sigma0"));
        }
        Ok(Self {
            mu0,
            kappa,
            sigma0,
            m,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn mu0(&self) -> &DVector<f64> {
        &self.mu0
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn sigma0(&self) -> &DMatrix<f64> {
        &self.sigma0
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    /// Prior mean of the class covariance, `Sigma0 / (m - d - 1)`.
    pub fn expected_covariance(&self) -> DMatrix<f64> {
        &self.sigma0 / (self.m - self.dim() as f64 - 1.0)
    }

    /// Conjugate update with the samples summarized by `s`.
    pub fn posterior(&self, s: &GaussSuffStats) -> Result<NiwParams> {
        check_dim(self.dim(), s.dim())?;
        if s.n == 0 {
            return Ok(self.clone());
        }
        let n = s.n as f64;
        let kappa_n = self.kappa + n;
        let mu_n = (&self.mu0 * self.kappa + &s.mean * n) / kappa_n;
        let mut sigma_n = &self.sigma0 + &s.scatter;
        let dev = &s.mean - &self.mu0;
        add_outer(&mut sigma_n, &dev, self.kappa * n / kappa_n);
        symmetrize(&mut sigma_n);
        Ok(NiwParams {
            mu0: mu_n,
            kappa: kappa_n,
            sigma0: sigma_n,
            m: self.m + n,
        })
    }

    /// Posterior predictive of one new sample: multivariate Student-t with
    /// `m_n - d + 1` degrees of freedom, location `mu_n` and scale
    /// `Sigma0_n (kappa_n + 1) / (kappa_n (m_n - d + 1))`. With empty stats this
    /// is the prior marginal `p(x)`.
    pub fn predictive(&self, s: &GaussSuffStats) -> Result<StudentT> {
        let post = self.posterior(s)?;
        let d = self.dim() as f64;
        let dof = post.m - d + 1.0;
        if !(dof > 0.0) {
            return Err(Error::param(format!("predictive degrees of freedom {dof} not positive")));
        }
        let scale = &post.sigma0 * ((post.kappa + 1.0) / (post.kappa * dof));
        StudentT::new(dof, post.mu0, scale)
    }

    pub fn log_predictive(&self, s: &GaussSuffStats, x: &DVector<f64>) -> Result<f64> {
        self.predictive(s)?.log_pdf(x)
    }

    /// Draws `(mean, cov)`: `cov ~ IW(Sigma0, m)` as the inverse of a
    /// `Wishart(Sigma0^{-1}, m)` draw, then `mean ~ N(mu0, cov / kappa)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, DMatrix<f64>) {
        let cov = sample_inverse_wishart(&self.sigma0, self.m, rng);
        let l = cholesky_lower(&(&cov / self.kappa), "sampled covariance")
            .expect("inverse-Wishart draw is positive definite");
        let z = standard_normal_vector(self.dim(), rng);
        (&self.mu0 + l * z, cov)
    }
}

#[derive(Serialize, Deserialize)]
struct RawNiw {
    mu0: Vec<f64>,
    kappa: f64,
    /// row-major d x d
    sigma0: Vec<f64>,
    m: f64,
}

impl From<NiwParams> for RawNiw {
    fn from(p: NiwParams) -> Self {
        Self {
            sigma0: row_major(&p.sigma0),
            mu0: p.mu0.iter().copied().collect(),
            kappa: p.kappa,
            m: p.m,
        }
    }
}

impl TryFrom<RawNiw> for NiwParams {
    type Error = Error;

    fn try_from(r: RawNiw) -> Result<Self> {
        let d = r.mu0.len();
        let sigma0 = matrix_from_row_major(d, &r.sigma0)?;
        NiwParams::new(DVector::from_vec(r.mu0), r.kappa, sigma0, r.m)
    }
}

pub fn standard_normal_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)))
}

/// Wishart draw with scale `scale` and `dof` degrees of freedom (Bartlett decomposition).
pub fn sample_wishart<R: Rng + ?Sized>(scale: &DMatrix<f64>, dof: f64, rng: &mut R) -> DMatrix<f64> {
    let d = scale.nrows();
    let l = cholesky_lower(scale, "wishart scale").expect("wishart scale must be positive definite");
    let mut a = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(dof - i as f64).expect("wishart dof must exceed d - 1");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let la = l * a;
    let mut w = &la * la.transpose();
    symmetrize(&mut w);
    w
}

/// Inverse-Wishart draw under the crate convention.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    sigma0: &DMatrix<f64>,
    m: f64,
    rng: &mut R,
) -> DMatrix<f64> {
    let inv_scale = sigma0
        .clone()
        .cholesky()
        .expect("sigma0 must be positive definite")
        .inverse();
    let w = sample_wishart(&inv_scale, m, rng);
    let mut cov = w
        .cholesky()
        .expect("wishart draw with m > d - 1 is positive definite")
        .inverse();
    symmetrize(&mut cov);
    cov
}

/// Multivariate Student-t density with a cached Cholesky factor of the scale.
#[derive(Clone, Debug)]
pub struct StudentT {
    dof: f64,
    location: DVector<f64>,
    scale: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl StudentT {
    pub fn new(dof: f64, location: DVector<f64>, scale: DMatrix<f64>) -> Result<Self> {
        let d = location.len();
        check_dim(d, scale.nrows())?;
        if !(dof > 0.0) {
            return Err(Error::param(format!("Student-t dof must be positive, got {dof}")));
        }
        let chol = cholesky_lower(&scale, "Student-t scale")?;
        let df = d as f64;
        let log_norm = ln_gamma((dof + df) / 2.0)
            - ln_gamma(dof / 2.0)
            - df / 2.0 * (dof.ln() + LN_PI)
            - 0.5 * log_det_from_chol(&chol);
        Ok(Self {
            dof,
            location,
            scale,
            chol,
            log_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn location(&self) -> &DVector<f64> {
        &self.location
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    /// Log density at the mode.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let mut scratch = vec![0.0; self.dim()];
        Ok(self.log_pdf_with(x.as_slice(), &mut scratch))
    }

    /// Allocation-free evaluation; `scratch.len()` must equal the dimension.
    pub fn log_pdf_with(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let q = mahalanobis_sq(&self.chol, x, self.location.as_slice(), scratch);
        self.log_norm - 0.5 * (self.dof + self.dim() as f64) * (q / self.dof).ln_1p()
    }
}
