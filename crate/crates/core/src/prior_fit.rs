//! Offline estimation of the base-distribution hyperparameters from a
//! labeled training set.
//!
//! `Sigma0` is tied to `m` through the pooled covariance
//! `S_p(m) = (m - d - 1) sum_j scatter_j / (n - k)`, so the search over `m` is
//! a profile-likelihood maximization of the scatter marginals. `kappa` and
//! `mu0` are then fitted from the class means, whose marginal under the model
//! is a Student-t with location `mu0` and scale proportional to
//! `1/n_j + 1/kappa`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, log_det_from_chol, log_det_spd, mahalanobis_sq};
use crate::niw::{ln_gamma, log_mvgamma, GaussSuffStats, NiwParams};
use crate::optim::{golden_section_max, log_space};

const LN_PI: f64 = 1.144_729_885_849_400_2;

fn pooled_scatter(stats: &[&GaussSuffStats], d: usize) -> Result<DMatrix<f64>> {
    let n: usize = stats.iter().map(|s| s.n()).sum();
    let k = stats.len();
    if n <= k {
        return Err(Error::input("pooled covariance needs at least one class with two samples"));
    }
    let mut acc = DMatrix::zeros(d, d);
    for s in stats {
        acc += s.scatter();
    }
    Ok(acc / (n - k) as f64)
}

fn check_m(m: f64, d: usize) -> Result<()> {
    if !(m > d as f64 + 1.0 && m.is_finite()) {
        return Err(Error::param(format!("m must exceed d + 1 = {}, got {m}", d + 1)));
    }
    Ok(())
}

/// `(m - d - 1) sum_j (n_j - 1) S_j / (n - k)`.
pub fn pooled_covariance(data: &LabeledDataset, m: f64) -> Result<DMatrix<f64>> {
    let d = data.dim();
    check_m(m, d)?;
    let stats = data.class_stats();
    let refs: Vec<&GaussSuffStats> = stats.values().collect();
    Ok(pooled_scatter(&refs, d)? * (m - d as f64 - 1.0))
}

/// Log density of a scatter matrix `A ~ W(Sigma, nu)` with `Sigma ~ IW(Sigma0, m)`
/// integrated out:
///
/// ```text
/// log G_d((nu+m)/2) - log G_d(nu/2) - log G_d(m/2) + (m/2) log|Sigma0|
///   + ((nu-d-1)/2) log|A| - ((nu+m)/2) log|A + Sigma0|
/// ```
pub fn log_marginal_scatter(a: &DMatrix<f64>, nu: usize, sigma0: &DMatrix<f64>, m: f64) -> Result<f64> {
    let d = a.nrows();
    if nu < d + 1 {
        return Err(Error::param(format!("scatter degrees of freedom {nu} below d + 1 = {}", d + 1)));
    }
    check_m(m, d)?;
    let log_det_a = a
        .clone()
        .cholesky()
        .map(|c| log_det_from_chol(&c.unpack()))
        .ok_or(Error::NotPositiveDefinite("scatter matrix"))?;
    let log_det_s0 = log_det_spd(sigma0, "sigma0")?;
    let log_det_sum = log_det_spd(&(a + sigma0), "scatter + sigma0")?;
    scatter_term(d, nu as f64, m, log_det_a, log_det_s0, log_det_sum)
}

fn scatter_term(d: usize, nu: f64, m: f64, log_det_a: f64, log_det_s0: f64, log_det_sum: f64) -> Result<f64> {
    let df = d as f64;
    Ok(log_mvgamma(d, (nu + m) / 2.0)? - log_mvgamma(d, nu / 2.0)? - log_mvgamma(d, m / 2.0)?
        + m / 2.0 * log_det_s0
        + (nu - df - 1.0) / 2.0 * log_det_a
        - (nu + m) / 2.0 * log_det_sum)
}

/// Profile log-likelihood of `m` over the classes with a nonsingular scatter.
pub struct MObjective {
    d: usize,
    pooled: DMatrix<f64>,
    log_det_pooled: f64,
    /// (scatter, nu, log|scatter|)
    classes: Vec<(DMatrix<f64>, f64, f64)>,
    pub classes_skipped: usize,
}

impl MObjective {
    pub fn new(data: &LabeledDataset) -> Result<Self> {
        let d = data.dim();
        let stats = data.class_stats();
        let refs: Vec<&GaussSuffStats> = stats.values().collect();
        let pooled = pooled_scatter(&refs, d)?;
        let log_det_pooled = log_det_spd(&pooled, "pooled covariance")?;
        let mut classes = Vec::new();
        let mut skipped = 0;
        for s in refs {
            if s.n() < d + 2 {
                skipped += 1;
                continue;
            }
            match s.scatter().clone().cholesky() {
                Some(c) => {
                    let ld = log_det_from_chol(&c.unpack());
                    classes.push((s.scatter().clone(), (s.n() - 1) as f64, ld));
                }
                None => skipped += 1,
            }
        }
        if classes.is_empty() {
            return Err(Error::input(format!(
                "no class has at least d + 2 = {} samples with a nonsingular scatter",
                d + 2
            )));
        }
        Ok(Self {
            d,
            pooled,
            log_det_pooled,
            classes,
            classes_skipped: skipped,
        })
    }

    pub fn classes_used(&self) -> usize {
        self.classes.len()
    }

    pub fn sigma0(&self, m: f64) -> DMatrix<f64> {
        &self.pooled * (m - self.d as f64 - 1.0)
    }

    pub fn eval(&self, m: f64) -> f64 {
        let c = m - self.d as f64 - 1.0;
        if !(c > 0.0) {
            return f64::NEG_INFINITY;
        }
        let s0 = &self.pooled * c;
        let log_det_s0 = self.d as f64 * c.ln() + self.log_det_pooled;
        self.classes
            .iter()
            .map(|(a, nu, log_det_a)| {
                let log_det_sum = match log_det_spd(&(a + &s0), "scatter + sigma0") {
                    Ok(v) => v,
                    Err(_) => return f64::NEG_INFINITY,
                };
                scatter_term(self.d, *nu, m, *log_det_a, log_det_s0, log_det_sum)
                    .unwrap_or(f64::NEG_INFINITY)
            })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MFit {
    pub m: f64,
    pub loglik: f64,
    pub at_bound: bool,
    pub classes_used: usize,
    pub classes_skipped: usize,
}

/// Maximizes the profile likelihood of `m` by golden-section search on
/// `log(m - d - 1)`, to an absolute tolerance of `1e-3` in `m`.
pub fn fit_m(data: &LabeledDataset, m_bounds: (f64, f64)) -> Result<MFit> {
    let d = data.dim() as f64;
    let (lo, hi) = m_bounds;
    if !(lo > d + 1.0 && hi > lo && hi.is_finite()) {
        return Err(Error::param(format!("degenerate m bracket ({lo}, {hi}) for d = {d}")));
    }
    let obj = MObjective::new(data)?;
    let t_lo = (lo - d - 1.0).ln();
    let t_hi = (hi - d - 1.0).ln();
    let tol = 1e-3 / (hi - d - 1.0);
    let best = golden_section_max(|t| obj.eval(t.exp() + d + 1.0), t_lo, t_hi, tol);
    Ok(MFit {
        m: best.x.exp() + d + 1.0,
        loglik: best.value,
        at_bound: best.at_bound,
        classes_used: obj.classes_used(),
        classes_skipped: obj.classes_skipped,
    })
}

/// Log-likelihood of the class means `x̄_j` as a function of `(kappa, mu0)`,
/// with `Sigma0` and `m` held fixed.
pub struct MeanLikelihood {
    d: usize,
    nu: f64,
    chol: DMatrix<f64>,
    log_det_s0: f64,
    /// (class mean, n_j)
    classes: Vec<(DVector<f64>, f64)>,
}

impl MeanLikelihood {
    pub fn new(data: &LabeledDataset, sigma0: &DMatrix<f64>, m: f64) -> Result<Self> {
        let d = data.dim();
        check_m(m, d)?;
        let chol = cholesky_lower(sigma0, "sigma0")?;
        let log_det_s0 = log_det_from_chol(&chol);
        let classes: Vec<_> = data
            .class_stats()
            .into_values()
            .map(|s| (s.mean().clone(), s.n() as f64))
            .collect();
        if classes.is_empty() {
            return Err(Error::input("no classes to fit kappa and mu0"));
        }
        Ok(Self {
            d,
            nu: m - d as f64 + 1.0,
            chol,
            log_det_s0,
            classes,
        })
    }

    fn quads(&self, mu0: &DVector<f64>) -> Vec<f64> {
        let mut scratch = vec![0.0; self.d];
        self.classes
            .iter()
            .map(|(x, _)| mahalanobis_sq(&self.chol, x.as_slice(), mu0.as_slice(), &mut scratch))
            .collect()
    }

    pub fn eval(&self, kappa: f64, mu0: &DVector<f64>) -> f64 {
        let (nu, df) = (self.nu, self.d as f64);
        let base = ln_gamma((nu + df) / 2.0) - ln_gamma(nu / 2.0) - df / 2.0 * (nu.ln() + LN_PI)
            - 0.5 * self.log_det_s0;
        self.quads(mu0)
            .iter()
            .zip(&self.classes)
            .map(|(q, (_, n))| {
                let c = 1.0 / n + 1.0 / kappa;
                base - 0.5 * df * (c / nu).ln() - 0.5 * (nu + df) * (q / c).ln_1p()
            })
            .sum()
    }

    /// Iteratively reweighted mean: the Student-t location fixed point with
    /// weights `1 / (c_j + q_j)`.
    pub fn mu0_step(&self, kappa: f64, start: &DVector<f64>, iterations: usize, tol: f64) -> DVector<f64> {
        let mut mu = start.clone();
        for _ in 0..iterations {
            let quads = self.quads(&mu);
            let mut num = DVector::zeros(self.d);
            let mut den = 0.0;
            for (q, (x, n)) in quads.iter().zip(&self.classes) {
                let w = 1.0 / (1.0 / n + 1.0 / kappa + q);
                num.axpy(w, x, 1.0);
                den += w;
            }
            let next = num / den;
            let shift = (&next - &mu).norm();
            mu = next;
            if shift < tol {
                break;
            }
        }
        mu
    }

    pub fn unweighted_mean(&self) -> DVector<f64> {
        let sum = self
            .classes
            .iter()
            .fold(DVector::zeros(self.d), |acc, (x, _)| acc + x);
        sum / self.classes.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaMu0Fit {
    pub kappa: f64,
    pub mu0: DVector<f64>,
    pub loglik: f64,
    pub at_bound: bool,
}

/// Alternating maximization: reweighted-mean step for `mu0` (10 iterations,
/// tolerance 1e-8), golden-section step for `kappa` on a log scale (width
/// 1e-3), repeated until the log-likelihood improves by less than 1e-6.
pub fn fit_kappa_mu0(
    data: &LabeledDataset,
    sigma0: &DMatrix<f64>,
    m: f64,
    kappa_bounds: (f64, f64),
) -> Result<KappaMu0Fit> {
    let (lo, hi) = kappa_bounds;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::param(format!("degenerate kappa bracket ({lo}, {hi})")));
    }
    let lik = MeanLikelihood::new(data, sigma0, m)?;
    let mut mu0 = lik.unweighted_mean();
    let mut kappa = (lo * hi).sqrt();
    let mut prev = f64::NEG_INFINITY;
    let mut at_bound = false;
    for _ in 0..500 {
        mu0 = lik.mu0_step(kappa, &mu0, 10, 1e-8);
        let best = golden_section_max(|t| lik.eval(t.exp(), &mu0), lo.ln(), hi.ln(), 1e-3);
        kappa = best.x.exp();
        at_bound = best.at_bound;
        let ll = lik.eval(kappa, &mu0);
        if ll - prev < 1e-6 {
            prev = prev.max(ll);
            break;
        }
        prev = ll;
    }
    Ok(KappaMu0Fit {
        kappa,
        mu0,
        loglik: prev,
        at_bound,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Defaults to `(d + 1.5, d + 501)`.
    pub m_bounds: Option<(f64, f64)>,
    pub kappa_bounds: (f64, f64),
    pub curve_points: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            m_bounds: None,
            kappa_bounds: (1e-3, 1e3),
            curve_points: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitCurves {
    pub m: Vec<(f64, f64)>,
    pub kappa: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    #[serde(flatten)]
    pub niw: NiwParams,
    pub curves: FitCurves,
    pub classes_used: usize,
    pub classes_skipped: usize,
    pub m_at_bound: bool,
    pub kappa_at_bound: bool,
}

/// `fit_m`, then the pooled covariance at the fitted `m`, then `fit_kappa_mu0`.
pub fn fit_all(data: &LabeledDataset, config: &FitConfig) -> Result<FitReport> {
    if data.is_empty() {
        return Err(Error::input("no samples"));
    }
    let d = data.dim() as f64;
    let m_bounds = config.m_bounds.unwrap_or((d + 1.5, d + 501.0));
    let mfit = fit_m(data, m_bounds)?;
    let obj = MObjective::new(data)?;
    let sigma0 = obj.sigma0(mfit.m);
    let km = fit_kappa_mu0(data, &sigma0, mfit.m, config.kappa_bounds)?;

    let points = config.curve_points.max(2);
    let m_curve = log_space(m_bounds.0 - d - 1.0, m_bounds.1 - d - 1.0, points)
        .into_iter()
        .map(|c| {
            let m = c + d + 1.0;
            (m, obj.eval(m))
        })
        .collect();
    let lik = MeanLikelihood::new(data, &sigma0, mfit.m)?;
    let kappa_curve = log_space(config.kappa_bounds.0, config.kappa_bounds.1, points)
        .into_iter()
        .map(|k| (k, lik.eval(k, &km.mu0)))
        .collect();

    let niw = NiwParams::new(km.mu0, km.kappa, sigma0, mfit.m)?;
    Ok(FitReport {
        niw,
        curves: FitCurves {
            m: m_curve,
            kappa: kappa_curve,
        },
        classes_used: mfit.classes_used,
        classes_skipped: mfit.classes_skipped,
        m_at_bound: mfit.at_bound,
        kappa_at_bound: km.at_bound,
    })
}
