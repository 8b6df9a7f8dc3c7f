//! Evaluation protocol: map discovered clusters to true classes by majority,
//! score known-class and held-out-class accuracy, replicate over stream
//! orderings, and the all-classes-known baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::{known_classes, PriorCounts};
use crate::niw::NiwParams;
use crate::rng::{derive_seed, derived_rng};
use crate::sir::{ClusterKey, EngineConfig, EngineState};

/// Maps each discovered cluster to the true class holding the plurality of
/// its members (ties to the lower class id).
pub fn majority_map(assignments: &[ClusterKey], truth: &[ClassId]) -> Result<BTreeMap<u64, ClassId>> {
    if assignments.len() != truth.len() {
        return Err(Error::input(format!(
            "{} assignments but {} true labels",
            assignments.len(),
            truth.len()
        )));
    }
    let mut tally: BTreeMap<u64, BTreeMap<ClassId, usize>> = BTreeMap::new();
    for (a, t) in assignments.iter().zip(truth) {
        if let ClusterKey::Founded(k) = a {
            *tally.entry(*k).or_default().entry(*t).or_default() += 1;
        }
    }
    Ok(tally
        .into_iter()
        .map(|(k, counts)| {
            // BTreeMap iterates ids ascending, so a strict comparison keeps the lowest id on ties
            let mut best = (0, 0);
            for (id, c) in counts {
                if c > best.1 {
                    best = (id, c);
                }
            }
            (k, best.0)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldoutScore {
    pub class: ClassId,
    pub samples: usize,
    /// Fraction of the class's samples lying in clusters mapped to it.
    pub accuracy: f64,
    pub clusters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub rows: Vec<ClassId>,
    pub cols: Vec<ClassId>,
    /// `counts[r][c]`: samples of class `rows[r]` decided as `cols[c]`
    /// (a discovered cluster counts as its majority class).
    pub counts: Vec<Vec<u64>>,
}

impl Confusion {
    fn add(&mut self, other: &Confusion) {
        for (r, row) in other.rows.iter().enumerate() {
            for (c, col) in other.cols.iter().enumerate() {
                let ri = self.rows.iter().position(|x| x == row).expect("same row set");
                let ci = self.cols.iter().position(|x| x == col).expect("same column set");
                self.counts[ri][ci] += other.counts[r][c];
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub represented_samples: usize,
    pub represented_accuracy: f64,
    pub heldout: Vec<HeldoutScore>,
    pub discovered_clusters: usize,
    pub confusion: Confusion,
}

/// Scores one final clustering. Only an assignment to the sample's own known
/// class counts as correct for a represented class, even when the sample sits
/// in a discovered cluster whose majority is that class.
pub fn score(assignments: &[ClusterKey], truth: &[ClassId], heldout: &[ClassId]) -> Result<RunScore> {
    let map = majority_map(assignments, truth)?;
    let held: BTreeSet<ClassId> = heldout.iter().copied().collect();
    let mut rep_total = 0usize;
    let mut rep_correct = 0usize;
    let mut per_class: BTreeMap<ClassId, (usize, usize)> = held.iter().map(|h| (*h, (0, 0))).collect();
    let decided: Vec<ClassId> = assignments
        .iter()
        .map(|a| match a {
            ClusterKey::Labeled(id) => *id,
            ClusterKey::Founded(k) => map[k],
        })
        .collect();
    for ((a, t), dcl) in assignments.iter().zip(truth).zip(&decided) {
        if held.contains(t) {
            let e = per_class.get_mut(t).expect("held-out entry");
            e.0 += 1;
            if matches!(a, ClusterKey::Founded(_)) && dcl == t {
                e.1 += 1;
            }
        } else {
            rep_total += 1;
            if *a == ClusterKey::Labeled(*t) {
                rep_correct += 1;
            }
        }
    }
    let heldout_scores = per_class
        .into_iter()
        .map(|(class, (n, hit))| HeldoutScore {
            class,
            samples: n,
            accuracy: if n == 0 { 0.0 } else { hit as f64 / n as f64 },
            clusters: map.values().filter(|c| **c == class).count(),
        })
        .collect();

    let rows: Vec<ClassId> = truth.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let cols: Vec<ClassId> = truth
        .iter()
        .chain(&decided)
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
    for (t, dcl) in truth.iter().zip(&decided) {
        let r = rows.binary_search(t).expect("row present");
        let c = cols.binary_search(dcl).expect("column present");
        counts[r][c] += 1;
    }
    Ok(RunScore {
        represented_samples: rep_total,
        represented_accuracy: if rep_total == 0 {
            0.0
        } else {
            rep_correct as f64 / rep_total as f64
        },
        heldout: heldout_scores,
        discovered_clusters: map.len(),
        confusion: Confusion { rows, cols, counts },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; 0 for a single value.
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldoutReport {
    pub class: ClassId,
    pub accuracy: MeanStd,
    pub avg_clusters: f64,
    /// Orderings in which at least one cluster mapped to this class.
    pub discovered_in: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub orderings: usize,
    pub represented_accuracy: MeanStd,
    pub per_heldout: Vec<HeldoutReport>,
    /// Summed over orderings.
    pub confusion: Confusion,
    pub runs: Vec<RunScore>,
}

impl EvalReport {
    pub fn from_runs(runs: Vec<RunScore>) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::param("at least one run is required"))?;
        let mut confusion = first.confusion.clone();
        for r in &runs[1..] {
            confusion.add(&r.confusion);
        }
        let rep: Vec<f64> = runs.iter().map(|r| r.represented_accuracy).collect();
        let per_heldout = first
            .heldout
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let acc: Vec<f64> = runs.iter().map(|r| r.heldout[i].accuracy).collect();
                let clusters: Vec<f64> = runs.iter().map(|r| r.heldout[i].clusters as f64).collect();
                HeldoutReport {
                    class: h.class,
                    accuracy: MeanStd::of(&acc),
                    avg_clusters: clusters.iter().sum::<f64>() / runs.len() as f64,
                    discovered_in: runs.iter().filter(|r| r.heldout[i].clusters > 0).count(),
                }
            })
            .collect();
        Ok(Self {
            orderings: runs.len(),
            represented_accuracy: MeanStd::of(&rep),
            per_heldout,
            confusion,
            runs,
        })
    }

    /// Plain-text table: one column for the represented classes, then an
    /// accuracy column per held-out class, and a row of average cluster counts.
    pub fn to_table(&self) -> String {
        let pct = |m: &MeanStd| format!("{:.1} ± {:.1}", 100.0 * m.mean, 100.0 * m.std);
        let mut header = vec!["".to_string(), "represented".to_string()];
        let mut acc = vec!["accuracy (%)".to_string(), pct(&self.represented_accuracy)];
        let mut clusters = vec!["avg. # of clusters".to_string(), "-".to_string()];
        for h in &self.per_heldout {
            header.push(format!("class {}", h.class));
            acc.push(pct(&h.accuracy));
            clusters.push(format!("{:.1}", h.avg_clusters));
        }
        let rows = [header, acc, clusters];
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, r) in rows.iter().enumerate() {
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, w))| {
                    let pad = w - s.chars().count();
                    if c == 0 {
                        format!("{s}{}", " ".repeat(pad))
                    } else {
                        format!("{}{s}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        let _ = writeln!(out, "orderings: {}", self.orderings);
        out
    }
}

/// Runs the engine on `n_orderings` shuffles of the test stream (in parallel)
/// and aggregates the scores. Ordering `o` shuffles with seed
/// `derive_seed(seed, o)` and runs the engine with `derive_seed(seed, 2^32 + o)`.
pub fn replicate_orderings(
    config: &EngineConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
    heldout: &[ClassId],
    n_orderings: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_orderings == 0 {
        return Err(Error::param("n_orderings must be at least 1"));
    }
    let runs = (0..n_orderings as u64)
        .into_par_iter()
        .map(|o| {
            let mut order: Vec<usize> = (0..test.len()).collect();
            order.shuffle(&mut derived_rng(seed, o));
            let stream = test.permuted(&order);
            let mut cfg = config.clone();
            cfg.seed = derive_seed(seed, (1u64 << 32) + o);
            let mut engine = EngineState::init(cfg, train)?;
            engine.run_stream(stream.samples())?;
            score(&engine.map_assignments(), stream.labels(), heldout)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_runs(runs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub accuracy: f64,
    pub per_class: Vec<(ClassId, f64)>,
    pub decisions: Vec<ClassId>,
}

/// Supervised classifier with every class known and no new-class option:
/// each sample goes to the class maximizing `n_j * p(x | D_j)` and is then
/// folded into that class, in stream order.
pub fn exhaustive_baseline(
    train: &LabeledDataset,
    test: &LabeledDataset,
    niw: &NiwParams,
    prior_counts: PriorCounts,
) -> Result<BaselineReport> {
    let mut classes = known_classes(train, prior_counts)?;
    let mut preds = classes
        .iter()
        .map(|c| niw.predictive(&c.stats))
        .collect::<Result<Vec<_>>>()?;
    let mut scratch = vec![0.0; niw.dim()];
    let mut decisions = Vec::with_capacity(test.len());
    for x in test.samples() {
        if x.len() != niw.dim() {
            return Err(Error::DimensionMismatch {
                expected: niw.dim(),
                got: x.len(),
            });
        }
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (j, (c, p)) in classes.iter().zip(&preds).enumerate() {
            let s = c.prior_count.ln() + p.log_pdf_with(x.as_slice(), &mut scratch);
            if s > best_score {
                best = j;
                best_score = s;
            }
        }
        decisions.push(classes[best].id);
        let c = &mut classes[best];
        c.stats.push(x)?;
        c.prior_count += 1.0;
        preds[best] = niw.predictive(&c.stats)?;
    }
    let mut tally: BTreeMap<ClassId, (usize, usize)> = BTreeMap::new();
    for (t, d) in test.labels().iter().zip(&decisions) {
        let e = tally.entry(*t).or_default();
        e.0 += 1;
        if t == d {
            e.1 += 1;
        }
    }
    let correct: usize = tally.values().map(|v| v.1).sum();
    Ok(BaselineReport {
        accuracy: if test.is_empty() { 0.0 } else { correct as f64 / test.len() as f64 },
        per_class: tally
            .into_iter()
            .map(|(id, (n, hit))| (id, hit as f64 / n as f64))
            .collect(),
        decisions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ClusterKey::{Founded as F, Labeled as L};

    #[test]
    fn plurality_with_ties_to_lower_id() {
        let m = majority_map(&[F(0), F(0), F(0), F(5), F(5)], &[7, 7, 9, 9, 8]).unwrap();
        assert_eq!(m[&0], 7);
        assert_eq!(m[&5], 8);
        assert!(majority_map(&[], &[]).unwrap().is_empty());
    }

    #[test]
    fn perfect_assignment() {
        let a = [L(1), L(1), L(2), F(3), F(3)];
        let t = [1, 1, 2, 3, 3];
        let s = score(&a, &t, &[3]).unwrap();
        assert_eq!(s.represented_accuracy, 1.0);
        assert_eq!(s.heldout[0].accuracy, 1.0);
        assert_eq!(s.heldout[0].clusters, 1);
    }

    #[test]
    fn ten_sample_hand_count() {
        // classes 1, 2 known; 3, 4 held out
        let a = [L(1), L(1), L(2), L(1), F(4), F(4), F(4), F(6), F(6), F(7)];
        let t = [1, 1, 2, 2, 3, 3, 4, 4, 4, 1];
        let s = score(&a, &t, &[3, 4]).unwrap();
        // represented: samples 0,1,2,3,9 -> correct 0,1,2
        assert!((s.represented_accuracy - 3.0 / 5.0).abs() < 1e-15);
        // cluster 4 -> class 3 (2 of 3), cluster 6 -> class 4, cluster 7 -> class 1
        assert_eq!(s.heldout[0].class, 3);
        assert_eq!(s.heldout[0].accuracy, 1.0);
        assert_eq!(s.heldout[0].clusters, 1);
        assert!((s.heldout[1].accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.heldout[1].clusters, 1);
        for (r, row) in s.confusion.counts.iter().enumerate() {
            let n = t.iter().filter(|x| **x == s.confusion.rows[r]).count() as u64;
            assert_eq!(row.iter().sum::<u64>(), n);
        }
    }

    #[test]
    fn cluster_relabeling_does_not_change_score() {
        let a = [L(1), F(4), F(4), F(9), L(2)];
        let b = [L(1), F(100), F(100), F(2), L(2)];
        let t = [1, 3, 3, 3, 2];
        assert_eq!(
            score(&a, &t, &[3]).unwrap().heldout,
            score(&b, &t, &[3]).unwrap().heldout
        );
    }

    #[test]
    fn single_run_has_zero_std() {
        let s = score(&[L(1), F(1)], &[1, 2], &[2]).unwrap();
        let r = EvalReport::from_runs(vec![s]).unwrap();
        assert_eq!(r.represented_accuracy.std, 0.0);
        assert_eq!(r.per_heldout[0].accuracy.std, 0.0);
        assert!(r.to_table().contains("class 2"));
    }
}
