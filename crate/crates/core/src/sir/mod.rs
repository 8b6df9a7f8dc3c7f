//! Sequential importance resampling over class-assignment histories.
//!
//! Each particle is one hypothesis about how the streamed samples seen so far
//! split into known classes and discovered clusters, summarized by per-cluster
//! sufficient statistics. When a sample arrives every particle is expanded
//! into one child per possible label (each known class, each of its
//! discovered clusters, and a new cluster), weighted by
//!
//! ```text
//! parent weight * CRP prior of the label * predictive density of x under the label
//! ```
//!
//! The decision for the sample is read off the normalized pool, and the pool
//! is then downsampled back to `M` particles with the optimal-threshold
//! scheme in [`resample`].

pub mod checkpoint;
pub mod resample;
pub mod trail;

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::{known_classes, KnownClass, PriorCounts};
use crate::niw::{GaussSuffStats, NiwParams, StudentT};
use crate::rng::derived_rng;
use trail::Trail;

/// Identity of a cluster inside a particle. Known classes keep their class id;
/// a discovered cluster is named after the stream index of the sample that
/// founded it, which makes keys comparable across particles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterKey {
    Labeled(ClassId),
    Founded(u64),
}

impl ClusterKey {
    pub fn is_labeled(&self) -> bool {
        matches!(self, ClusterKey::Labeled(_))
    }
}

impl std::fmt::Display for ClusterKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClusterKey::Labeled(id) => write!(f, "{id}"),
            ClusterKey::Founded(i) => write!(f, "c{i}"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionMode {
    /// Label of the heaviest child in the expanded pool.
    #[default]
    Map,
    /// Largest aggregated mass among known classes, the clusters of the
    /// heaviest parent, and "new".
    Marginal,
}

impl std::str::FromStr for DecisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(DecisionMode::Map),
            "marginal" => Ok(DecisionMode::Marginal),
            other => Err(Error::input(format!("unknown decision mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub particles: usize,
    pub alpha: f64,
    pub niw: NiwParams,
    pub prior_counts: PriorCounts,
    pub seed: u64,
    pub decision: DecisionMode,
}

impl EngineConfig {
    pub fn new(niw: NiwParams, alpha: f64, particles: usize) -> Self {
        Self {
            particles,
            alpha,
            niw,
            prior_counts: PriorCounts::Actual,
            seed: 0,
            decision: DecisionMode::Map,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::param("particle count must be at least 1"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::param(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// One cluster of a particle together with its cached predictive density.
#[derive(Clone, Debug)]
pub struct Cluster {
    key: ClusterKey,
    stats: GaussSuffStats,
    crp_count: f64,
    predictive: StudentT,
}

impl Cluster {
    pub fn new(key: ClusterKey, stats: GaussSuffStats, crp_count: f64, niw: &NiwParams) -> Result<Self> {
        let predictive = niw.predictive(&stats)?;
        Ok(Self {
            key,
            stats,
            crp_count,
            predictive,
        })
    }

    pub fn key(&self) -> ClusterKey {
        self.key
    }

    pub fn stats(&self) -> &GaussSuffStats {
        &self.stats
    }

    /// Occupancy used by the CRP prior.
    pub fn crp_count(&self) -> f64 {
        self.crp_count
    }

    pub fn predictive(&self) -> &StudentT {
        &self.predictive
    }
}

/// Where a child sends the new sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    /// Index into the parent's cluster list.
    Existing(usize),
    New,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Child {
    pub target: Target,
    pub log_weight: f64,
    /// Log prior times predictive of this label alone.
    pub log_increment: f64,
}

#[derive(Clone, Debug)]
pub struct Particle {
    log_weight: f64,
    /// Log joint probability of the particle's assignment history and the
    /// streamed samples, given the training data. Breaks weight ties when
    /// picking the heaviest particle.
    log_joint: f64,
    /// Known classes first (ascending id), then discovered clusters in founding order.
    clusters: Vec<Arc<Cluster>>,
    crp_total: f64,
    trail: Trail,
}

impl Particle {
    pub fn new(log_weight: f64, clusters: Vec<Cluster>) -> Self {
        let crp_total = clusters.iter().map(|c| c.crp_count).sum();
        Self {
            log_weight,
            log_joint: 0.0,
            clusters: clusters.into_iter().map(Arc::new).collect(),
            crp_total,
            trail: None,
        }
    }

    pub fn log_weight(&self) -> f64 {
        self.log_weight
    }

    pub fn log_joint(&self) -> f64 {
        self.log_joint
    }

    pub fn clusters(&self) -> impl ExactSizeIterator<Item = &Cluster> {
        self.clusters.iter().map(|c| c.as_ref())
    }

    pub fn cluster(&self, i: usize) -> &Cluster {
        &self.clusters[i]
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    /// Number of discovered (unlabeled) clusters.
    pub fn discovered_count(&self) -> usize {
        self.clusters.iter().filter(|c| !c.key.is_labeled()).count()
    }

    pub fn last_assignment(&self) -> Option<ClusterKey> {
        self.trail.as_ref().map(|n| n.key)
    }

    /// Cluster key of every streamed sample, oldest first.
    pub fn assignments(&self) -> Vec<ClusterKey> {
        trail::to_vec(&self.trail)
    }

    pub fn key_of(&self, target: Target, sample_index: u64) -> ClusterKey {
        match target {
            Target::Existing(i) => self.clusters[i].key,
            Target::New => ClusterKey::Founded(sample_index),
        }
    }

    /// Unnormalized child log-weights: one per existing cluster, then "new".
    pub fn expand(&self, x: &[f64], alpha: f64, marginal: &StudentT, scratch: &mut [f64]) -> Vec<Child> {
        let log_norm = (alpha + self.crp_total).ln();
        let mut out = Vec::with_capacity(self.clusters.len() + 1);
        for (i, c) in self.clusters.iter().enumerate() {
            let inc = c.crp_count.ln() - log_norm + c.predictive.log_pdf_with(x, scratch);
            out.push(Child {
                target: Target::Existing(i),
                log_weight: self.log_weight + inc,
                log_increment: inc,
            });
        }
        let inc = alpha.ln() - log_norm + marginal.log_pdf_with(x, scratch);
        out.push(Child {
            target: Target::New,
            log_weight: self.log_weight + inc,
            log_increment: inc,
        });
        out
    }

    /// The particle obtained by sending `x` (stream index `sample_index`) to `target`.
    pub fn child(&self, target: Target, x: &DVector<f64>, niw: &NiwParams, sample_index: u64) -> Result<Particle> {
        let mut clusters = self.clusters.clone();
        let key = match target {
            Target::Existing(i) => {
                let old = &self.clusters[i];
                let stats = old.stats.added(x)?;
                clusters[i] = Arc::new(Cluster::new(old.key, stats, old.crp_count + 1.0, niw)?);
                old.key
            }
            Target::New => {
                let key = ClusterKey::Founded(sample_index);
                let stats = GaussSuffStats::empty(x.len()).added(x)?;
                clusters.push(Arc::new(Cluster::new(key, stats, 1.0, niw)?));
                key
            }
        };
        Ok(Particle {
            log_weight: self.log_weight,
            log_joint: self.log_joint,
            clusters,
            crp_total: self.crp_total + 1.0,
            trail: trail::push(&self.trail, key),
        })
    }
}

/// The labeled outcome of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Labeled(ClassId),
    /// An existing discovered cluster.
    Cluster(u64),
    /// A new cluster founded by this sample.
    New(u64),
}

impl Label {
    pub fn key(&self) -> ClusterKey {
        match *self {
            Label::Labeled(id) => ClusterKey::Labeled(id),
            Label::Cluster(k) | Label::New(k) => ClusterKey::Founded(k),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentDecision {
    pub index: u64,
    pub chosen_label: Label,
    /// Posterior mass on "founds a new cluster".
    pub p_novel: f64,
    pub labeled_posteriors: Vec<(ClassId, f64)>,
    /// Posterior mass on previously discovered clusters.
    pub unlabeled_mass: f64,
    /// Effective sample size after resampling.
    pub ess: f64,
    /// Discovered clusters in the heaviest child.
    pub k_tilde: usize,
}

#[derive(Clone, Debug)]
pub struct PoolEntry {
    pub parent: usize,
    pub target: Target,
    pub log_weight: f64,
    pub log_increment: f64,
    /// Normalized over the pool.
    pub weight: f64,
}

/// All children of all particles for one incoming sample, in particle order
/// and, within a particle, in cluster order with "new" last.
#[derive(Clone, Debug)]
pub struct Pool {
    pub sample_index: u64,
    pub entries: Vec<PoolEntry>,
    /// Heaviest particle before expansion.
    pub map_parent: usize,
}

impl Pool {
    /// Index of the heaviest child; the earliest wins ties.
    pub fn map_entry(&self) -> usize {
        let mut best = 0;
        for (i, e) in self.entries.iter().enumerate() {
            if e.weight > self.entries[best].weight {
                best = i;
            }
        }
        best
    }
}

/// Reads the assignment decision off a normalized pool.
pub fn decide(particles: &[Particle], pool: &Pool, mode: DecisionMode) -> AssignmentDecision {
    let mut labeled: Vec<(ClassId, f64)> = particles[0]
        .clusters()
        .filter_map(|c| match c.key {
            ClusterKey::Labeled(id) => Some((id, 0.0)),
            ClusterKey::Founded(_) => None,
        })
        .collect();
    let mut p_novel = 0.0;
    let mut unlabeled_mass = 0.0;
    for e in &pool.entries {
        match particles[e.parent].key_of(e.target, pool.sample_index) {
            _ if e.target == Target::New => p_novel += e.weight,
            ClusterKey::Labeled(id) => {
                let slot = labeled
                    .binary_search_by_key(&id, |p| p.0)
                    .expect("known classes are shared by all particles");
                labeled[slot].1 += e.weight;
            }
            ClusterKey::Founded(_) => unlabeled_mass += e.weight,
        }
    }

    let best = &pool.entries[pool.map_entry()];
    let best_parent = &particles[best.parent];
    let k_tilde = best_parent.discovered_count() + usize::from(best.target == Target::New);

    let chosen_label = match mode {
        DecisionMode::Map => match best.target {
            Target::New => Label::New(pool.sample_index),
            Target::Existing(i) => match best_parent.clusters[i].key {
                ClusterKey::Labeled(id) => Label::Labeled(id),
                ClusterKey::Founded(k) => Label::Cluster(k),
            },
        },
        DecisionMode::Marginal => {
            let map_parent = &particles[pool.map_parent];
            let mut candidates: Vec<(Label, f64)> =
                labeled.iter().map(|&(id, w)| (Label::Labeled(id), w)).collect();
            for c in map_parent.clusters() {
                if let ClusterKey::Founded(k) = c.key {
                    let mass: f64 = pool
                        .entries
                        .iter()
                        .filter(|e| {
                            e.target != Target::New
                                && particles[e.parent].key_of(e.target, pool.sample_index) == c.key
                        })
                        .map(|e| e.weight)
                        .sum();
                    candidates.push((Label::Cluster(k), mass));
                }
            }
            candidates.push((Label::New(pool.sample_index), p_novel));
            let mut pick = 0;
            for (i, c) in candidates.iter().enumerate() {
                if c.1 > candidates[pick].1 {
                    pick = i;
                }
            }
            candidates[pick].0
        }
    };

    AssignmentDecision {
        index: pool.sample_index,
        chosen_label,
        p_novel,
        labeled_posteriors: labeled,
        unlabeled_mass,
        ess: f64::NAN,
        k_tilde,
    }
}

/// Filter state: `M` weighted particles plus the configuration.
#[derive(Clone, Debug)]
pub struct EngineState {
    config: EngineConfig,
    known: Vec<KnownClass>,
    particles: Vec<Particle>,
    n_seen: u64,
    marginal: StudentT,
}

impl EngineState {
    /// All particles start identical: known classes hold their training
    /// statistics and their configured pseudo-counts, weights are uniform.
    pub fn init(config: EngineConfig, training: &LabeledDataset) -> Result<Self> {
        config.validate()?;
        if training.dim() != config.niw.dim() {
            return Err(Error::DimensionMismatch {
                expected: config.niw.dim(),
                got: training.dim(),
            });
        }
        let known = known_classes(training, config.prior_counts)?;
        Self::from_known(config, known)
    }

    pub fn from_known(config: EngineConfig, known: Vec<KnownClass>) -> Result<Self> {
        config.validate()?;
        let clusters = known
            .iter()
            .map(|k| Cluster::new(ClusterKey::Labeled(k.id), k.stats.clone(), k.prior_count, &config.niw))
            .collect::<Result<Vec<_>>>()?;
        let m = config.particles;
        let proto = Particle::new(-(m as f64).ln(), clusters);
        let marginal = config.niw.predictive(&GaussSuffStats::empty(config.niw.dim()))?;
        Ok(Self {
            particles: vec![proto; m],
            known,
            config,
            n_seen: 0,
            marginal,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn known(&self) -> &[KnownClass] {
        &self.known
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn n_seen(&self) -> u64 {
        self.n_seen
    }

    pub fn dim(&self) -> usize {
        self.config.niw.dim()
    }

    /// Prior marginal `p(x)`, the evidence of a brand-new cluster.
    pub fn marginal(&self) -> &StudentT {
        &self.marginal
    }

    /// Computed over distinct hypotheses, so padding copies do not inflate it.
    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(self.hypotheses().iter().map(|h| h.1.exp()))
    }

    /// Distinct hypotheses as `(first particle index, summed log weight)`.
    ///
    /// A fresh engine holds `M` copies of one hypothesis, and padding a small
    /// pool up to `M` splits entries into adjacent copies. Systematic sampling
    /// over a pool built from copies is periodic and sends every copy to the
    /// same child, so copies are expanded once with their combined weight.
    pub fn hypotheses(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.particles.len());
        for (i, p) in self.particles.iter().enumerate() {
            match out.last_mut() {
                Some((lead, lw)) if same_history(&self.particles[*lead], p) => {
                    *lw = log_add_exp(*lw, p.log_weight);
                }
                _ => out.push((i, p.log_weight)),
            }
        }
        out
    }

    /// Largest weight; ties go to the larger joint probability, then the lower index.
    pub fn map_particle(&self) -> &Particle {
        &self.particles[heaviest(&self.particles, &self.hypotheses())]
    }

    /// Clustering of the stream according to the heaviest particle.
    pub fn map_assignments(&self) -> Vec<ClusterKey> {
        self.map_particle().assignments()
    }

    fn check_sample(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!("sample {} has a non-finite feature", self.n_seen)));
        }
        Ok(())
    }

    /// Expands every particle and normalizes the pool.
    pub fn expand(&self, x: &DVector<f64>) -> Result<Pool> {
        self.check_sample(x)?;
        let d = self.dim();
        let alpha = self.config.alpha;
        let hypotheses = self.hypotheses();
        let per_particle: Vec<Vec<Child>> = hypotheses
            .par_iter()
            .map(|&(i, _)| {
                let mut scratch = vec![0.0; d];
                self.particles[i].expand(x.as_slice(), alpha, &self.marginal, &mut scratch)
            })
            .collect();
        let mut entries = Vec::with_capacity(per_particle.iter().map(Vec::len).sum());
        for (&(parent, lw), children) in hypotheses.iter().zip(per_particle) {
            for c in children {
                entries.push(PoolEntry {
                    parent,
                    target: c.target,
                    log_weight: lw + c.log_increment,
                    log_increment: c.log_increment,
                    weight: 0.0,
                });
            }
        }
        let max = entries.iter().map(|e| e.log_weight).fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Numerical(format!(
                "every hypothesis for sample {} has zero or undefined weight",
                self.n_seen
            )));
        }
        let sum: f64 = entries.iter().map(|e| (e.log_weight - max).exp()).sum();
        let lse = max + sum.ln();
        for e in &mut entries {
            e.weight = (e.log_weight - lse).exp();
            e.log_weight -= lse;
        }
        let map_parent = heaviest(&self.particles, &hypotheses);
        Ok(Pool {
            sample_index: self.n_seen,
            entries,
            map_parent,
        })
    }

    /// Processes one sample: expand, decide, downsample to `M`, renormalize.
    pub fn step(&mut self, x: &DVector<f64>) -> Result<AssignmentDecision> {
        let pool = self.expand(x)?;
        let mut decision = decide(&self.particles, &pool, self.config.decision);

        let weights: Vec<f64> = pool.entries.iter().map(|e| e.weight).collect();
        let mut rng = derived_rng(self.config.seed, self.n_seen);
        let u: f64 = rng.random();
        let selected = resample::downsample(&weights, self.config.particles, u);
        let total: f64 = selected.iter().map(|s| s.1).sum();

        let niw = &self.config.niw;
        let index = self.n_seen;
        let particles = &self.particles;
        let next: Vec<Particle> = selected
            .par_iter()
            .map(|&(i, w)| {
                let e = &pool.entries[i];
                let mut child = particles[e.parent].child(e.target, x, niw, index)?;
                child.log_weight = (w / total).ln();
                child.log_joint += e.log_increment;
                Ok(child)
            })
            .collect::<Result<_>>()?;
        self.particles = next;
        self.n_seen += 1;
        decision.ess = self.effective_sample_size();
        Ok(decision)
    }

    pub fn run_stream(&mut self, samples: &[DVector<f64>]) -> Result<Vec<AssignmentDecision>> {
        samples.iter().map(|x| self.step(x)).collect()
    }
}

fn heaviest(particles: &[Particle], hypotheses: &[(usize, f64)]) -> usize {
    let mut best = hypotheses[0];
    for &(i, lw) in &hypotheses[1..] {
        if lw > best.1 || (lw == best.1 && particles[i].log_joint > particles[best.0].log_joint) {
            best = (i, lw);
        }
    }
    best.0
}

/// Same assignment history. Copies made from one pool entry share the
/// parent's history node and differ only in their own newest node.
fn same_history(a: &Particle, b: &Particle) -> bool {
    match (&a.trail, &b.trail) {
        (None, None) => true,
        (Some(x), Some(y)) => {
            Arc::ptr_eq(x, y)
                || (x.key == y.key
                    && match (&x.prev, &y.prev) {
                        (None, None) => true,
                        (Some(p), Some(q)) => Arc::ptr_eq(p, q),
                        _ => false,
                    })
        }
        _ => false,
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// `1 / sum w^2` of normalized weights.
pub fn effective_sample_size(weights: impl IntoIterator<Item = f64>) -> f64 {
    1.0 / weights.into_iter().map(|w| w * w).sum::<f64>()
}
