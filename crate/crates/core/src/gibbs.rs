//! Collapsed Gibbs sampling over the assignments of unlabeled samples, and an
//! exact posterior by enumerating every partition of a short stream.
//!
//! Both serve as references for the particle engine: they target the same
//! posterior (known classes fixed with their training statistics and CRP
//! pseudo-counts, unlabeled samples free to join known classes, each other,
//! or new clusters).

use nalgebra::DVector;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::model::KnownClass;
use crate::niw::{GaussSuffStats, NiwParams, StudentT};
use crate::rng::{rng_from_seed, Rng};

#[derive(Clone, Debug)]
struct GCluster {
    /// `Some(id)` for known classes, which are never removed.
    class: Option<ClassId>,
    stats: GaussSuffStats,
    count: f64,
    predictive: StudentT,
}

impl GCluster {
    fn refresh(&mut self, niw: &NiwParams) -> Result<()> {
        self.predictive = niw.predictive(&self.stats)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GibbsInit {
    /// Each sample drawn in turn from its conditional given the samples before it.
    #[default]
    Sequential,
    /// Every sample in its own cluster.
    Singletons,
}

/// Chain state: known classes first, then discovered clusters.
#[derive(Clone, Debug)]
pub struct GibbsState {
    clusters: Vec<GCluster>,
    assignments: Vec<usize>,
    alpha: f64,
    marginal: StudentT,
    sweeps: u64,
}

fn sample_log_categorical(logp: &[f64], rng: &mut Rng) -> usize {
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logp.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    // rounding; fall back to the last positive entry
    w.iter().rposition(|v| *v > 0.0).unwrap_or(0)
}

impl GibbsState {
    fn empty(known: &[KnownClass], niw: &NiwParams, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::param(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        let clusters = known
            .iter()
            .map(|k| {
                Ok(GCluster {
                    class: Some(k.id),
                    stats: k.stats.clone(),
                    count: k.prior_count,
                    predictive: niw.predictive(&k.stats)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if clusters.is_empty() && alpha == 0.0 {
            return Err(Error::param("no known classes and alpha = 0 leave no admissible assignment"));
        }
        Ok(Self {
            clusters,
            assignments: Vec::new(),
            alpha,
            marginal: niw.predictive(&GaussSuffStats::empty(niw.dim()))?,
            sweeps: 0,
        })
    }

    pub fn new(
        data: &[DVector<f64>],
        known: &[KnownClass],
        niw: &NiwParams,
        alpha: f64,
        init: GibbsInit,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut s = Self::empty(known, niw, alpha)?;
        for (i, x) in data.iter().enumerate() {
            if x.len() != niw.dim() {
                return Err(Error::DimensionMismatch {
                    expected: niw.dim(),
                    got: x.len(),
                });
            }
            let target = match init {
                GibbsInit::Sequential => {
                    let logp = s.conditional_log_weights(x);
                    sample_log_categorical(&logp, rng)
                }
                GibbsInit::Singletons => s.clusters.len(),
            };
            s.insert(i, x, target, niw)?;
        }
        Ok(s)
    }

    pub fn sweeps(&self) -> u64 {
        self.sweeps
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    /// Known class of sample `i`, or `None` when it sits in a discovered cluster.
    pub fn class_of(&self, i: usize) -> Option<ClassId> {
        self.clusters[self.assignments[i]].class
    }

    pub fn cluster_of(&self, i: usize) -> usize {
        self.assignments[i]
    }

    /// Unnormalized log conditional for a sample currently outside the
    /// state: one entry per cluster, then the new-cluster entry.
    pub fn conditional_log_weights(&self, x: &DVector<f64>) -> Vec<f64> {
        let mut scratch = vec![0.0; x.len()];
        let mut out: Vec<f64> = self
            .clusters
            .iter()
            .map(|c| c.count.ln() + c.predictive.log_pdf_with(x.as_slice(), &mut scratch))
            .collect();
        out.push(self.alpha.ln() + self.marginal.log_pdf_with(x.as_slice(), &mut scratch));
        out
    }

    /// Normalized conditional of sample `i` given all the others.
    pub fn conditional_probabilities(&self, data: &[DVector<f64>], i: usize, niw: &NiwParams) -> Result<Vec<f64>> {
        let mut s = self.clone();
        s.remove(i, &data[i], niw)?;
        let logp = s.conditional_log_weights(&data[i]);
        let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logp.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        Ok(w.into_iter().map(|v| v / total).collect())
    }

    fn insert(&mut self, i: usize, x: &DVector<f64>, target: usize, niw: &NiwParams) -> Result<()> {
        if target == self.clusters.len() {
            let stats = GaussSuffStats::empty(x.len()).added(x)?;
            self.clusters.push(GCluster {
                class: None,
                predictive: niw.predictive(&stats)?,
                stats,
                count: 1.0,
            });
        } else {
            let c = &mut self.clusters[target];
            c.stats.push(x)?;
            c.count += 1.0;
            c.refresh(niw)?;
        }
        if i == self.assignments.len() {
            self.assignments.push(target);
        } else {
            self.assignments[i] = target;
        }
        Ok(())
    }

    fn remove(&mut self, i: usize, x: &DVector<f64>, niw: &NiwParams) -> Result<()> {
        let j = self.assignments[i];
        let c = &mut self.clusters[j];
        c.stats.pop(x)?;
        c.count -= 1.0;
        if c.class.is_none() && c.stats.is_empty() {
            self.clusters.remove(j);
            for a in &mut self.assignments {
                if *a > j {
                    *a -= 1;
                }
            }
        } else {
            c.refresh(niw)?;
        }
        self.assignments[i] = usize::MAX;
        Ok(())
    }

    /// One systematic-scan sweep in ascending sample order.
    pub fn sweep(&mut self, data: &[DVector<f64>], niw: &NiwParams, rng: &mut Rng) -> Result<()> {
        for (i, x) in data.iter().enumerate() {
            self.remove(i, x, niw)?;
            let logp = self.conditional_log_weights(x);
            let target = sample_log_categorical(&logp, rng);
            self.insert(i, x, target, niw)?;
        }
        self.sweeps += 1;
        #[cfg(debug_assertions)]
        if self.sweeps.is_multiple_of(100) {
            self.check_consistency(data, None)?;
        }
        Ok(())
    }

    /// Verifies that every cluster's statistics equal a recomputation from
    /// the current assignments (plus the training statistics of known classes).
    pub fn check_consistency(&self, data: &[DVector<f64>], known: Option<&[KnownClass]>) -> Result<()> {
        for (j, c) in self.clusters.iter().enumerate() {
            let members: Vec<&DVector<f64>> = data
                .iter()
                .zip(&self.assignments)
                .filter(|(_, a)| **a == j)
                .map(|(x, _)| x)
                .collect();
            if c.class.is_none() && members.is_empty() {
                return Err(Error::Numerical(format!("discovered cluster {j} is empty")));
            }
            let base = match (c.class, known) {
                (Some(id), Some(k)) => k.iter().find(|kc| kc.id == id).map(|kc| kc.stats.clone()),
                _ => None,
            };
            let fresh = GaussSuffStats::from_samples(data.first().map_or(c.stats.dim(), |x| x.len()), members.iter().copied())?;
            let expected_n = match c.class {
                Some(_) => match &base {
                    Some(b) => b.n() + fresh.n(),
                    None => c.stats.n(),
                },
                None => fresh.n(),
            };
            if c.stats.n() != expected_n {
                return Err(Error::Numerical(format!("cluster {j} count drifted")));
            }
            let reference = match (c.class, base) {
                (Some(_), Some(b)) => Some(b.merge(&fresh)?),
                (None, _) => Some(fresh),
                _ => None,
            };
            if let Some(r) = reference {
                let scale = 1.0 + r.scatter().abs().max() + r.mean().abs().max();
                let diff = (r.scatter() - c.stats.scatter()).abs().max() + (r.mean() - c.stats.mean()).abs().max();
                if diff > 1e-8 * scale {
                    return Err(Error::Numerical(format!("cluster {j} statistics drifted by {diff}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub alpha: f64,
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub init: GibbsInit,
    /// Batches for the batch-means standard errors.
    pub batches: usize,
}

impl GibbsConfig {
    pub fn new(alpha: f64, sweeps: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            alpha,
            sweeps,
            burn_in,
            seed,
            init: GibbsInit::Sequential,
            batches: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleFrequencies {
    pub index: usize,
    /// Fraction of kept sweeps in which the sample sat in each known class.
    pub labeled: Vec<(ClassId, f64)>,
    /// Fraction of kept sweeps in a discovered cluster.
    pub novel: f64,
    /// Batch-means standard error of `novel`.
    pub novel_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsSummary {
    pub config: GibbsConfig,
    pub kept_sweeps: usize,
    pub samples: Vec<SampleFrequencies>,
    /// Fraction of kept sweeps in which samples `i` and `j` shared a cluster, row-major `n x n`.
    pub co_clustering: Vec<f64>,
    pub mean_discovered_clusters: f64,
}

impl GibbsSummary {
    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn co_clustering_at(&self, i: usize, j: usize) -> f64 {
        self.co_clustering[i * self.n() + j]
    }
}

/// Batch-means standard error of the mean of `xs`.
pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let b = batches.min(xs.len()).max(1);
    let size = xs.len() / b;
    if b < 2 || size == 0 {
        return 0.0;
    }
    let means: Vec<f64> = (0..b)
        .map(|k| xs[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    (var / b as f64).sqrt()
}

pub fn run_chain(data: &[DVector<f64>], known: &[KnownClass], niw: &NiwParams, cfg: &GibbsConfig) -> Result<GibbsSummary> {
    if cfg.sweeps <= cfg.burn_in {
        return Err(Error::param(format!(
            "sweeps ({}) must exceed burn-in ({})",
            cfg.sweeps, cfg.burn_in
        )));
    }
    let n = data.len();
    let mut rng = rng_from_seed(cfg.seed);
    let mut state = GibbsState::new(data, known, niw, cfg.alpha, cfg.init, &mut rng)?;
    let ids: Vec<ClassId> = known.iter().map(|k| k.id).collect();
    let kept = cfg.sweeps - cfg.burn_in;
    let mut labeled_hits = vec![vec![0u64; ids.len()]; n];
    let mut novel_trace = vec![Vec::with_capacity(kept); n];
    let mut co = vec![0u64; n * n];
    let mut discovered = 0u64;
    for sweep in 0..cfg.sweeps {
        state.sweep(data, niw, &mut rng)?;
        if sweep < cfg.burn_in {
            continue;
        }
        discovered += state.clusters.iter().filter(|c| c.class.is_none()).count() as u64;
        for i in 0..n {
            let j = state.assignments[i];
            match state.clusters[j].class {
                Some(_) => {
                    labeled_hits[i][j] += 1;
                    novel_trace[i].push(0.0);
                }
                None => novel_trace[i].push(1.0),
            }
            for k in 0..n {
                if state.assignments[k] == j {
                    co[i * n + k] += 1;
                }
            }
        }
    }
    let kf = kept as f64;
    let samples = (0..n)
        .map(|i| SampleFrequencies {
            index: i,
            labeled: ids.iter().zip(&labeled_hits[i]).map(|(id, h)| (*id, *h as f64 / kf)).collect(),
            novel: novel_trace[i].iter().sum::<f64>() / kf,
            novel_se: batch_means_se(&novel_trace[i], cfg.batches),
        })
        .collect();
    Ok(GibbsSummary {
        config: cfg.clone(),
        kept_sweeps: kept,
        samples,
        co_clustering: co.into_iter().map(|c| c as f64 / kf).collect(),
        mean_discovered_clusters: discovered as f64 / kf,
    })
}

/// Running log-sum-exp.
#[derive(Clone, Copy, Debug)]
struct LogAcc {
    max: f64,
    sum: f64,
}

impl LogAcc {
    const ZERO: LogAcc = LogAcc {
        max: f64::NEG_INFINITY,
        sum: 0.0,
    };

    fn add(&mut self, lw: f64) {
        if lw == f64::NEG_INFINITY {
            return;
        }
        if lw > self.max {
            self.sum = self.sum * (self.max - lw).exp() + 1.0;
            self.max = lw;
        } else {
            self.sum += (lw - self.max).exp();
        }
    }

    fn log(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Exact posterior over the assignments of a short unlabeled stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactPosterior {
    /// Log evidence of the whole stream given the known classes.
    pub log_evidence: f64,
    /// Number of complete assignments enumerated.
    pub leaves: u64,
    /// Per sample: posterior of each known class given the whole stream.
    pub labeled: Vec<Vec<(ClassId, f64)>>,
    /// Per sample: posterior of lying in a discovered cluster given the whole stream.
    pub p_unlabeled: Vec<f64>,
    /// Per sample: posterior of founding a new cluster given the whole stream.
    pub p_founds: Vec<f64>,
    /// Per sample `t`: probability that it founds a new cluster given samples `0..=t` only.
    pub p_new_filtered: Vec<f64>,
    /// Pairwise posterior of sharing a cluster, row-major.
    pub co_clustering: Vec<f64>,
}

/// Largest stream accepted by [`exact_enumeration_posterior`].
pub const MAX_EXACT: usize = 10;

/// Number of complete assignments of `n` samples with `k` known classes:
/// each sample joins a known class, an existing new block, or opens a block.
pub fn assignment_count(n: usize, k: usize, allow_new: bool) -> u64 {
    // ways[b] = number of prefixes with b open blocks
    let mut ways = vec![0u64; n + 1];
    ways[0] = 1;
    for _ in 0..n {
        let mut next = vec![0u64; n + 1];
        for (b, w) in ways.iter().enumerate() {
            if *w == 0 {
                continue;
            }
            next[b] = next[b].saturating_add(w.saturating_mul((k + b) as u64));
            if allow_new && b < n {
                next[b + 1] = next[b + 1].saturating_add(*w);
            }
        }
        ways = next;
    }
    ways.iter().fold(0u64, |a, w| a.saturating_add(*w))
}

struct Enumerator<'a> {
    data: &'a [DVector<f64>],
    niw: &'a NiwParams,
    alpha: f64,
    n_known: usize,
    total0: f64,
    marginal: StudentT,
    // clusters in the current path: (stats, count, predictive)
    stack: Vec<(GaussSuffStats, f64, StudentT)>,
    path: Vec<usize>,
    founded: Vec<bool>,
    depth_total: Vec<LogAcc>,
    depth_new: Vec<LogAcc>,
    leaf: Vec<(f64, Vec<usize>, Vec<bool>)>,
    leaves: u64,
}

impl Enumerator<'_> {
    fn recurse(&mut self, t: usize, lw: f64) -> Result<()> {
        if t == self.data.len() {
            self.leaves += 1;
            self.leaf.push((lw, self.path.clone(), self.founded.clone()));
            return Ok(());
        }
        let x = &self.data[t];
        let mut scratch = vec![0.0; x.len()];
        let log_norm = (self.alpha + self.total0 + t as f64).ln();
        for j in 0..self.stack.len() {
            let (stats, count, pred) = &self.stack[j];
            let step = count.ln() - log_norm + pred.log_pdf_with(x.as_slice(), &mut scratch);
            let saved = (stats.clone(), *count, pred.clone());
            let new_stats = stats.added(x)?;
            let new_pred = self.niw.predictive(&new_stats)?;
            self.stack[j] = (new_stats, count + 1.0, new_pred);
            self.path.push(j);
            self.founded.push(false);
            self.depth_total[t].add(lw + step);
            self.recurse(t + 1, lw + step)?;
            self.path.pop();
            self.founded.pop();
            self.stack[j] = saved;
        }
        if self.alpha > 0.0 {
            let step = self.alpha.ln() - log_norm + self.marginal.log_pdf_with(x.as_slice(), &mut scratch);
            let stats = GaussSuffStats::empty(x.len()).added(x)?;
            let pred = self.niw.predictive(&stats)?;
            self.stack.push((stats, 1.0, pred));
            self.path.push(self.stack.len() - 1);
            self.founded.push(true);
            self.depth_total[t].add(lw + step);
            self.depth_new[t].add(lw + step);
            self.recurse(t + 1, lw + step)?;
            self.path.pop();
            self.founded.pop();
            self.stack.pop();
        }
        Ok(())
    }
}

/// Enumerates every assignment of `data` (at most [`MAX_EXACT`] samples) to
/// known classes and discovered clusters, weighting each by its CRP prior and
/// collapsed likelihood.
pub fn exact_enumeration_posterior(
    data: &[DVector<f64>],
    known: &[KnownClass],
    niw: &NiwParams,
    alpha: f64,
) -> Result<ExactPosterior> {
    let n = data.len();
    if n > MAX_EXACT {
        return Err(Error::TooLarge(format!("{n} samples exceed the limit of {MAX_EXACT}")));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::param(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    let leaves = assignment_count(n, known.len(), alpha > 0.0);
    if leaves > 20_000_000 {
        return Err(Error::TooLarge(format!("{leaves} assignments to enumerate")));
    }
    if known.is_empty() && alpha == 0.0 && n > 0 {
        return Err(Error::param("no known classes and alpha = 0 leave no admissible assignment"));
    }
    for x in data {
        if x.len() != niw.dim() {
            return Err(Error::DimensionMismatch {
                expected: niw.dim(),
                got: x.len(),
            });
        }
    }
    let stack = known
        .iter()
        .map(|k| Ok((k.stats.clone(), k.prior_count, niw.predictive(&k.stats)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut e = Enumerator {
        data,
        niw,
        alpha,
        n_known: known.len(),
        total0: known.iter().map(|k| k.prior_count).sum(),
        marginal: niw.predictive(&GaussSuffStats::empty(niw.dim()))?,
        stack,
        path: Vec::with_capacity(n),
        founded: Vec::with_capacity(n),
        depth_total: vec![LogAcc::ZERO; n],
        depth_new: vec![LogAcc::ZERO; n],
        leaf: Vec::new(),
        leaves: 0,
    };
    e.recurse(0, 0.0)?;

    let mut total = LogAcc::ZERO;
    for (lw, _, _) in &e.leaf {
        total.add(*lw);
    }
    let log_evidence = total.log();
    let k = e.n_known;
    let mut labeled = vec![vec![0.0; k]; n];
    let mut p_unlabeled = vec![0.0; n];
    let mut p_founds = vec![0.0; n];
    let mut co = vec![0.0; n * n];
    for (lw, path, founded) in &e.leaf {
        let w = (lw - log_evidence).exp();
        for i in 0..n {
            if path[i] < k {
                labeled[i][path[i]] += w;
            } else {
                p_unlabeled[i] += w;
            }
            if founded[i] {
                p_founds[i] += w;
            }
            for j in 0..n {
                if path[i] == path[j] {
                    co[i * n + j] += w;
                }
            }
        }
    }
    let p_new_filtered = (0..n)
        .map(|t| {
            let num = e.depth_new[t].log();
            if num == f64::NEG_INFINITY {
                0.0
            } else {
                (num - e.depth_total[t].log()).exp()
            }
        })
        .collect();
    Ok(ExactPosterior {
        log_evidence,
        leaves: e.leaves,
        labeled: labeled
            .into_iter()
            .map(|row| known.iter().map(|kc| kc.id).zip(row).collect())
            .collect(),
        p_unlabeled,
        p_founds,
        p_new_filtered,
        co_clustering: co,
    })
}
