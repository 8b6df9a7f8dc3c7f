//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use novelclass::model::KnownClass;
use novelclass::niw::ln_gamma;
use novelclass::{GaussSuffStats, NiwParams};

/// Adaptive Simpson on `[a, b]`, split into `panels` pieces first so narrow
/// peaks are not stepped over. `tol` is relative to the coarse total.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize, tol: f64) -> f64 {
    let h = (b - a) / panels as f64;
    let coarse: Vec<(f64, f64, f64, f64, f64, f64)> = (0..panels)
        .map(|i| {
            let (l, r) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (fl, fm, fr) = (f(l), f(0.5 * (l + r)), f(r));
            (l, r, fl, fm, fr, (r - l) / 6.0 * (fl + 4.0 * fm + fr))
        })
        .collect();
    let scale: f64 = coarse.iter().map(|c| c.5.abs()).sum();
    let eps = tol * scale / panels as f64;
    coarse
        .into_iter()
        .map(|(l, r, fl, fm, fr, whole)| simpson(f, l, r, fl, fm, fr, whole, eps, 30))
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Inverse-Wishart density for d = 1: inverse gamma with shape `m/2` and scale `s/2`.
pub fn iw1_pdf(v: f64, s: f64, m: f64) -> f64 {
    let a = 0.5 * m;
    let b = 0.5 * s;
    (a * b.ln() - ln_gamma(a) - (a + 1.0) * v.ln() - b / v).exp()
}

/// Wishart density for d = 1: gamma with shape `nu/2` and scale `2 sigma2`.
pub fn w1_pdf(a: f64, sigma2: f64, nu: f64) -> f64 {
    let k = 0.5 * nu;
    ((k - 1.0) * a.ln() - a / (2.0 * sigma2) - ln_gamma(k) - k * (2.0 * sigma2).ln()).exp()
}

/// 1-D NIW posterior written out from the update rules, without the library.
pub fn posterior_1d(mu0: f64, kappa: f64, s0: f64, m: f64, data: &[f64]) -> (f64, f64, f64, f64) {
    let n = data.len() as f64;
    if data.is_empty() {
        return (mu0, kappa, s0, m);
    }
    let mean = data.iter().sum::<f64>() / n;
    let scatter: f64 = data.iter().map(|x| (x - mean).powi(2)).sum();
    let kn = kappa + n;
    let mun = (kappa * mu0 + n * mean) / kn;
    let sn = s0 + scatter + kappa * n / kn * (mean - mu0).powi(2);
    (mun, kn, sn, m + n)
}

/// `p(x | data)` by integrating `N(x | mu, v) NIW(mu, v)` over `mu` and
/// `t = ln v` numerically.
pub fn predictive_quadrature_1d(mu0: f64, kappa: f64, s0: f64, m: f64, data: &[f64], x: f64) -> f64 {
    let (mun, kn, sn, mn) = posterior_1d(mu0, kappa, s0, m, data);
    let t_mode = (sn / (mn + 2.0)).ln();
    let inner = |t: f64| {
        let v = t.exp();
        // closed form over mu would defeat the purpose; integrate it
        let sd = (v / kn).sqrt().max(v.sqrt());
        let lo = mun.min(x) - 12.0 * sd;
        let hi = mun.max(x) + 12.0 * sd;
        let g = |mu: f64| normal_pdf(x, mu, v) * normal_pdf(mu, mun, v / kn);
        integrate(&g, lo, hi, 48, 1e-10) * iw1_pdf(v, sn, mn) * v
    };
    integrate(&inner, t_mode - 25.0, t_mode + 60.0, 200, 1e-9)
}

/// `p(a)` of a 1-D scatter under `W(a | v, nu) IW(v | s0, m)`, by quadrature over `ln v`.
pub fn scatter_marginal_quadrature_1d(a: f64, nu: f64, s0: f64, m: f64) -> f64 {
    let centre = ((a + s0) / (nu + m)).ln();
    let f = |t: f64| {
        let v = t.exp();
        w1_pdf(a, v, nu) * iw1_pdf(v, s0, m) * v
    };
    integrate(&f, centre - 30.0, centre + 40.0, 400, 1e-10)
}

pub fn niw_1d(mu0: f64, kappa: f64, s0: f64, m: f64) -> NiwParams {
    NiwParams::new(DVector::from_vec(vec![mu0]), kappa, DMatrix::from_element(1, 1, s0), m).unwrap()
}

pub fn v1(x: f64) -> DVector<f64> {
    DVector::from_vec(vec![x])
}

pub fn known_1d(id: u32, xs: &[f64], prior_count: f64) -> KnownClass {
    KnownClass {
        id,
        stats: GaussSuffStats::from_samples(1, xs.iter().map(|&x| v1(x)).collect::<Vec<_>>().iter()).unwrap(),
        prior_count,
    }
}

/// Greedy single-hypothesis rule: each sample joins the label with the largest
/// `count * p(x | cluster)`, or founds a cluster when `alpha * p(x)` is larger.
/// Ties go to known classes in order, then discovered clusters, then new.
/// Returns `(label, founding index)` pairs: `(Some(class), None)` for a known
/// class, `(None, Some(i))` for the cluster founded at sample `i`.
pub fn greedy_rule(
    known: &[KnownClass],
    niw: &NiwParams,
    alpha: f64,
    stream: &[DVector<f64>],
) -> Vec<(Option<u32>, Option<u64>)> {
    let d = niw.dim();
    let mut labeled: Vec<(u32, f64, GaussSuffStats)> =
        known.iter().map(|k| (k.id, k.prior_count, k.stats.clone())).collect();
    let mut found: Vec<(u64, GaussSuffStats)> = Vec::new();
    let mut out = Vec::new();
    for (i, x) in stream.iter().enumerate() {
        let total: f64 = labeled.iter().map(|l| l.1).sum::<f64>() + found.iter().map(|f| f.1.n() as f64).sum::<f64>();
        let mut best = (f64::NEG_INFINITY, 0usize);
        let mut scores = Vec::new();
        for l in &labeled {
            scores.push((l.1 / (alpha + total)).ln() + niw.log_predictive(&l.2, x).unwrap());
        }
        for f in &found {
            scores.push((f.1.n() as f64 / (alpha + total)).ln() + niw.log_predictive(&f.1, x).unwrap());
        }
        scores.push((alpha / (alpha + total)).ln() + niw.log_predictive(&GaussSuffStats::empty(d), x).unwrap());
        for (j, &s) in scores.iter().enumerate() {
            if s > best.0 {
                best = (s, j);
            }
        }
        let j = best.1;
        if j < labeled.len() {
            labeled[j].2.push(x).unwrap();
            labeled[j].1 += 1.0;
            out.push((Some(labeled[j].0), None));
        } else if j < labeled.len() + found.len() {
            let f = &mut found[j - labeled.len()];
            f.1.push(x).unwrap();
            out.push((None, Some(f.0)));
        } else {
            let mut s = GaussSuffStats::empty(d);
            s.push(x).unwrap();
            found.push((i as u64, s));
            out.push((None, Some(i as u64)));
        }
    }
    out
}
