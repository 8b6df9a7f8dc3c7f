//! Lossless JSON snapshots of the engine between samples.
//!
//! Particles share clusters and history prefixes; the document stores each
//! history node once in a table (parents before children) and particles refer
//! to nodes by index. Cached predictive densities are rebuilt on load. The
//! step RNG is derived from `(seed, n_seen)`, so no generator state is stored.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::trail::{Trail, TrailNode};
use super::{Cluster, ClusterKey, EngineConfig, EngineState, Particle};
use crate::error::{Error, Result};
use crate::model::KnownClass;
use crate::niw::{GaussSuffStats, StudentT};

pub const FORMAT: &str = "novelclass-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    config: EngineConfig,
    n_seen: u64,
    known: Vec<KnownClass>,
    trail_nodes: Vec<NodeRecord>,
    particles: Vec<ParticleRecord>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    key: ClusterKey,
    prev: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct ClusterRecord {
    key: ClusterKey,
    crp_count: f64,
    stats: GaussSuffStats,
}

#[derive(Serialize, Deserialize)]
struct ParticleRecord {
    log_weight: f64,
    log_joint: f64,
    trail: Option<usize>,
    clusters: Vec<ClusterRecord>,
}

fn node_table(particles: &[Particle]) -> (Vec<NodeRecord>, Vec<Option<usize>>) {
    let mut ids: HashMap<*const TrailNode, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut heads = Vec::with_capacity(particles.len());
    for p in particles {
        // walk back to the first node already in the table
        let mut chain = Vec::new();
        let mut cur = p.trail.as_ref();
        while let Some(node) = cur {
            if ids.contains_key(&Arc::as_ptr(node)) {
                break;
            }
            chain.push(node);
            cur = node.prev.as_ref();
        }
        let mut prev = cur.map(|n| ids[&Arc::as_ptr(n)]);
        for node in chain.into_iter().rev() {
            let id = nodes.len();
            nodes.push(NodeRecord { key: node.key, prev });
            ids.insert(Arc::as_ptr(node), id);
            prev = Some(id);
        }
        heads.push(p.trail.as_ref().map(|n| ids[&Arc::as_ptr(n)]));
    }
    (nodes, heads)
}

impl EngineState {
    pub fn write_checkpoint<W: Write>(&self, w: W) -> Result<()> {
        let (trail_nodes, heads) = node_table(&self.particles);
        let particles = self
            .particles
            .iter()
            .zip(heads)
            .map(|(p, trail)| ParticleRecord {
                log_weight: p.log_weight,
                log_joint: p.log_joint,
                trail,
                clusters: p
                    .clusters
                    .iter()
                    .map(|c| ClusterRecord {
                        key: c.key,
                        crp_count: c.crp_count,
                        stats: c.stats.clone(),
                    })
                    .collect(),
            })
            .collect();
        let doc = Document {
            format: FORMAT.to_string(),
            version: VERSION,
            config: self.config.clone(),
            n_seen: self.n_seen,
            known: self.known.clone(),
            trail_nodes,
            particles,
        };
        serde_json::to_writer(w, &doc)?;
        Ok(())
    }

    pub fn to_checkpoint_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self> {
        let doc: Document = serde_json::from_reader(r)?;
        Self::from_document(doc)
    }

    pub fn from_checkpoint_str(s: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(s)?;
        Self::from_document(doc)
    }

    fn from_document(doc: Document) -> Result<Self> {
        if doc.format != FORMAT {
            return Err(Error::input(format!("not a checkpoint (format tag '{}')", doc.format)));
        }
        if doc.version != VERSION {
            return Err(Error::input(format!("unsupported checkpoint version {}", doc.version)));
        }
        doc.config.validate()?;
        if doc.particles.len() != doc.config.particles {
            return Err(Error::input(format!(
                "checkpoint holds {} particles but the configuration asks for {}",
                doc.particles.len(),
                doc.config.particles
            )));
        }
        let niw = &doc.config.niw;
        let d = niw.dim();

        let mut trails: Vec<Trail> = Vec::with_capacity(doc.trail_nodes.len());
        for (i, n) in doc.trail_nodes.iter().enumerate() {
            let prev = match n.prev {
                None => None,
                Some(p) if p < i => trails[p].clone(),
                Some(p) => return Err(Error::input(format!("history node {i} points forward to {p}"))),
            };
            trails.push(super::trail::push(&prev, n.key));
        }

        // identical (key, count, stats) triples are rebuilt once and shared
        let mut cache: HashMap<String, Arc<Cluster>> = HashMap::new();
        let mut particles = Vec::with_capacity(doc.particles.len());
        for rec in doc.particles {
            let mut clusters = Vec::with_capacity(rec.clusters.len());
            for c in rec.clusters {
                if c.stats.dim() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: c.stats.dim(),
                    });
                }
                let sig = serde_json::to_string(&(&c.key, c.crp_count, &c.stats))?;
                let cluster = match cache.get(&sig) {
                    Some(a) => a.clone(),
                    None => {
                        let a = Arc::new(Cluster::new(c.key, c.stats, c.crp_count, niw)?);
                        cache.insert(sig, a.clone());
                        a
                    }
                };
                clusters.push(cluster);
            }
            let trail = match rec.trail {
                None => None,
                Some(t) => trails
                    .get(t)
                    .cloned()
                    .ok_or_else(|| Error::input(format!("history node {t} out of range")))?,
            };
            let crp_total = clusters.iter().map(|c| c.crp_count).sum();
            particles.push(Particle {
                log_weight: rec.log_weight,
                log_joint: rec.log_joint,
                clusters,
                crp_total,
                trail,
            });
        }
        let marginal: StudentT = niw.predictive(&GaussSuffStats::empty(d))?;
        Ok(EngineState {
            config: doc.config,
            known: doc.known,
            particles,
            n_seen: doc.n_seen,
            marginal,
        })
    }
}
