//! Chinese restaurant process: conditional prior weights, stream simulation,
//! stick breaking and calibration of the concentration parameter `alpha`.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::optim::log_space;
use crate::rng::{derive_seed, rng_from_seed};

/// Occupancy of known classes and discovered clusters plus the concentration.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassCounts {
    pub labeled: Vec<(ClassId, f64)>,
    pub unlabeled: Vec<(u64, f64)>,
    pub alpha: f64,
}

impl ClassCounts {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::param(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        let mut seen = HashSet::new();
        for &(id, c) in &self.labeled {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::param(format!("class {id} has invalid count {c}")));
            }
            if !seen.insert(id) {
                return Err(Error::param(format!("duplicate class id {id}")));
            }
        }
        let mut seen = HashSet::new();
        for &(key, c) in &self.unlabeled {
            if !(c >= 1.0 && c.is_finite()) {
                return Err(Error::param(format!("cluster {key} has invalid count {c}")));
            }
            if !seen.insert(key) {
                return Err(Error::param(format!("duplicate cluster key {key}")));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.labeled.iter().map(|c| c.1).sum::<f64>() + self.unlabeled.iter().map(|c| c.1).sum::<f64>()
    }
}

/// Normalized prior probabilities of the next sample's class.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorWeights {
    pub labeled: Vec<f64>,
    pub unlabeled: Vec<f64>,
    pub new_class: f64,
}

/// `n_j / (alpha + n)` for every occupied class and `alpha / (alpha + n)` for a new one.
pub fn conditional_prior_weights(counts: &ClassCounts) -> Result<PriorWeights> {
    counts.validate()?;
    let norm = counts.alpha + counts.total();
    if norm <= 0.0 {
        return Err(Error::param("all counts are zero and alpha is zero"));
    }
    Ok(PriorWeights {
        labeled: counts.labeled.iter().map(|c| c.1 / norm).collect(),
        unlabeled: counts.unlabeled.iter().map(|c| c.1 / norm).collect(),
        new_class: counts.alpha / norm,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrpConfig {
    pub alpha: f64,
    pub n_stream: usize,
    pub seed_classes: usize,
    pub seed_count_per_class: usize,
}

/// Simulates `n_stream` customers. Tables `0..seed_classes` are pre-filled
/// with `seed_count_per_class` customers each; new tables get the next index.
pub fn crp_simulate<R: Rng + ?Sized>(cfg: &CrpConfig, rng: &mut R) -> Result<Vec<usize>> {
    if !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
        return Err(Error::param(format!("alpha must be positive, got {}", cfg.alpha)));
    }
    let mut tables: Vec<f64> = vec![cfg.seed_count_per_class as f64; cfg.seed_classes];
    let mut total: f64 = tables.iter().sum();
    let mut out = Vec::with_capacity(cfg.n_stream);
    for _ in 0..cfg.n_stream {
        let u = rng.random::<f64>() * (cfg.alpha + total);
        let mut acc = 0.0;
        let mut chosen = tables.len();
        for (j, &c) in tables.iter().enumerate() {
            acc += c;
            if u < acc {
                chosen = j;
                break;
            }
        }
        if chosen == tables.len() {
            tables.push(0.0);
        }
        tables[chosen] += 1.0;
        total += 1.0;
        out.push(chosen);
    }
    Ok(out)
}

/// Number of distinct tables in an assignment sequence.
pub fn table_count(assignments: &[usize]) -> usize {
    assignments.iter().collect::<HashSet<_>>().len()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StickBreaking {
    pub weights: Vec<f64>,
    /// Mass not yet broken off.
    pub remainder: f64,
}

/// Truncated stick breaking: `beta_i = b_i prod_{l<i} (1 - b_l)`, `b_i ~ Beta(1, alpha)`.
pub fn stick_breaking_sample<R: Rng + ?Sized>(
    alpha: f64,
    truncation: usize,
    rng: &mut R,
) -> Result<StickBreaking> {
    if truncation == 0 {
        return Err(Error::param("truncation must be at least 1"));
    }
    let beta = Beta::new(1.0, alpha)
        .map_err(|e| Error::param(format!("alpha must be positive: {e}")))?;
    let mut remainder = 1.0;
    let mut weights = Vec::with_capacity(truncation);
    for _ in 0..truncation {
        let b: f64 = beta.sample(rng);
        weights.push(b * remainder);
        remainder *= 1.0 - b;
    }
    Ok(StickBreaking { weights, remainder })
}

/// Settings for calibrating `alpha` against a target probability that a new
/// sample belongs to one of the known classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSearch {
    pub target_p: f64,
    /// Pseudo-counts of the known classes (one entry per class).
    pub seed_counts: Vec<f64>,
    pub n_stream: usize,
    pub grid: Vec<f64>,
    pub runs_per_alpha: usize,
    pub seed: u64,
}

impl AlphaSearch {
    /// Unit seed counts for `k` classes, log grid 0.01..100 with 25 points.
    pub fn with_defaults(target_p: f64, k: usize, seed: u64) -> Self {
        Self {
            target_p,
            seed_counts: vec![1.0; k],
            n_stream: 1000,
            grid: log_space(0.01, 100.0, 25),
            runs_per_alpha: 2000,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub alpha: f64,
    pub p_hat: f64,
    /// `(alpha, p_hat(alpha))` for every grid point.
    pub curve: Vec<(f64, f64)>,
}

/// Fraction of a simulated stream that lands on the seed tables.
fn seed_table_fraction<R: Rng + ?Sized>(alpha: f64, seed_total: f64, n_stream: usize, rng: &mut R) -> f64 {
    let mut on_seed = seed_total;
    let mut total = seed_total;
    let mut hits = 0usize;
    for _ in 0..n_stream {
        let u = rng.random::<f64>() * (alpha + total);
        if u < on_seed {
            on_seed += 1.0;
            hits += 1;
        }
        total += 1.0;
    }
    hits as f64 / n_stream as f64
}

/// Grid search: for each `alpha`, simulate `runs_per_alpha` CRP streams seeded
/// with the known-class counts, measure the fraction of stream samples that
/// join a known class, and return the `alpha` closest to `target_p` (ties go
/// to the smaller `alpha`). Per-run streams use `derive_seed`, so the result
/// does not depend on thread scheduling.
pub fn estimate_alpha(search: &AlphaSearch) -> Result<AlphaEstimate> {
    if search.grid.is_empty() {
        return Err(Error::param("alpha grid is empty"));
    }
    if !(search.target_p > 0.0 && search.target_p < 1.0) {
        return Err(Error::param(format!("target_p must be in (0, 1), got {}", search.target_p)));
    }
    if search.n_stream == 0 || search.runs_per_alpha == 0 {
        return Err(Error::param("n_stream and runs_per_alpha must be positive"));
    }
    if search.grid.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::param("alpha grid values must be positive"));
    }
    let seed_total: f64 = search.seed_counts.iter().sum();
    let curve: Vec<(f64, f64)> = search
        .grid
        .par_iter()
        .enumerate()
        .map(|(g, &alpha)| {
            let grid_seed = derive_seed(search.seed, g as u64);
            let sum: f64 = (0..search.runs_per_alpha)
                .map(|r| {
                    let mut rng = rng_from_seed(derive_seed(grid_seed, r as u64));
                    seed_table_fraction(alpha, seed_total, search.n_stream, &mut rng)
                })
                .sum();
            (alpha, sum / search.runs_per_alpha as f64)
        })
        .collect();
    let mut best: Option<(f64, f64, f64)> = None;
    for &(alpha, p) in &curve {
        let gap = (p - search.target_p).abs();
        best = match best {
            Some((a, bp, bg)) if bg < gap || (bg == gap && a <= alpha) => Some((a, bp, bg)),
            _ => Some((alpha, p, gap)),
        };
    }
    let (alpha, p_hat, _) = best.expect("grid is nonempty");
    Ok(AlphaEstimate {
        alpha,
        p_hat,
        curve,
    })
}
