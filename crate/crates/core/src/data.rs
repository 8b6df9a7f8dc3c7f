use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::niw::GaussSuffStats;

/// Class identifier. Known classes carry the ids found in the training data.
pub type ClassId = u32;

/// Feature vectors with a parallel list of class ids.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    samples: Vec<DVector<f64>>,
    labels: Vec<ClassId>,
}

impl LabeledDataset {
    pub fn new(dim: usize, samples: Vec<DVector<f64>>, labels: Vec<ClassId>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("feature dimension must be at least 1"));
        }
        if samples.len() != labels.len() {
            return Err(Error::input(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        for (i, x) in samples.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::input(format!("sample {i} has a non-finite feature")));
            }
        }
        Ok(Self {
            dim,
            samples,
            labels,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            samples: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DVector<f64>, ClassId)> {
        self.samples.iter().zip(self.labels.iter().copied())
    }

    pub fn push(&mut self, x: DVector<f64>, label: ClassId) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        self.samples.push(x);
        self.labels.push(label);
        Ok(())
    }

    /// Distinct class ids in ascending order.
    pub fn class_ids(&self) -> Vec<ClassId> {
        let mut ids = self.labels.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn class_counts(&self) -> BTreeMap<ClassId, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    /// Per-class sufficient statistics, sorted by class id.
    pub fn class_stats(&self) -> BTreeMap<ClassId, GaussSuffStats> {
        let mut by_class: BTreeMap<ClassId, Vec<&DVector<f64>>> = BTreeMap::new();
        for (x, l) in self.iter() {
            by_class.entry(l).or_default().push(x);
        }
        by_class
            .into_iter()
            .map(|(id, xs)| {
                let s = GaussSuffStats::from_samples(self.dim, xs)
                    .expect("dimensions validated at construction");
                (id, s)
            })
            .collect()
    }

    /// Reorders samples by `order` (a permutation of `0..len`).
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            dim: self.dim,
            samples: order.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: order.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn filter_classes(&self, keep: impl Fn(ClassId) -> bool) -> Self {
        let (samples, labels) = self
            .iter()
            .filter(|(_, l)| keep(*l))
            .map(|(x, l)| (x.clone(), l))
            .unzip();
        Self {
            dim: self.dim,
            samples,
            labels,
        }
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut out = self.clone();
        out.samples.extend(other.samples.iter().cloned());
        out.labels.extend(other.labels.iter().copied());
        Ok(out)
    }
}
