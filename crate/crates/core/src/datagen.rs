//! Synthetic datasets: the two-ring "flower" set and classes drawn from a
//! Normal x Inverse-Wishart prior, plus a stratified train/test split.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, LabeledDataset};
use crate::error::{Error, Result};
use crate::linalg::cholesky_lower;
use crate::niw::{sample_inverse_wishart, standard_normal_vector, NiwParams};
use crate::rng::{derived_rng, Rng};

/// Parameters of one Gaussian class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianClass {
    pub id: ClassId,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianClass {
    pub fn sample_n(&self, n: usize, rng: &mut Rng) -> Result<Vec<DVector<f64>>> {
        let l = cholesky_lower(&self.cov, "class covariance")?;
        Ok((0..n)
            .map(|_| &self.mean + &l * standard_normal_vector(self.mean.len(), rng))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowerSpec {
    pub n_classes: usize,
    pub inner_radius: f64,
    pub outer_radius: f64,
    /// Classes on the inner ring; `None` splits in proportion to circumference.
    pub inner_classes: Option<usize>,
    pub iw_scale: DMatrix<f64>,
    pub iw_dof: f64,
    pub samples_per_class: usize,
    pub n_heldout: usize,
    pub seed: u64,
}

impl Default for FlowerSpec {
    fn default() -> Self {
        Self {
            n_classes: 23,
            inner_radius: 4.0,
            outer_radius: 8.0,
            inner_classes: None,
            iw_scale: DMatrix::identity(2, 2) * 10.0,
            iw_dof: 20.0,
            samples_per_class: 100,
            n_heldout: 3,
            seed: 0,
        }
    }
}

impl FlowerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_radius > 0.0 && self.outer_radius > 0.0) {
            return Err(Error::param("ring radii must be positive"));
        }
        if self.n_classes < 2 {
            return Err(Error::param("the flower needs at least two classes"));
        }
        if self.n_heldout >= self.n_classes {
            return Err(Error::param(format!(
                "held-out count {} must be below the class count {}",
                self.n_heldout, self.n_classes
            )));
        }
        if self.iw_scale.shape() != (2, 2) {
            return Err(Error::param("the flower is two-dimensional; iw_scale must be 2x2"));
        }
        if self.iw_dof <= 1.0 {
            return Err(Error::param("iw_dof must exceed d - 1 = 1"));
        }
        if let Some(k) = self.inner_classes {
            if k == 0 || k >= self.n_classes {
                return Err(Error::param("inner ring must hold between 1 and n_classes - 1 classes"));
            }
        }
        Ok(())
    }

    pub fn inner_count(&self) -> usize {
        self.inner_classes.unwrap_or_else(|| {
            let share = self.n_classes as f64 * self.inner_radius / (self.inner_radius + self.outer_radius);
            (share.round() as usize).clamp(1, self.n_classes - 1)
        })
    }

    /// Class means: inner ring first (ids `1..=inner`), then the outer ring,
    /// rotated by half the inner angular step.
    pub fn means(&self) -> Vec<DVector<f64>> {
        let inner = self.inner_count();
        let outer = self.n_classes - inner;
        let step_in = 2.0 * PI / inner as f64;
        let step_out = 2.0 * PI / outer as f64;
        let ring = |r: f64, a: f64| DVector::from_vec(vec![r * a.cos(), r * a.sin()]);
        (0..inner)
            .map(|i| ring(self.inner_radius, i as f64 * step_in))
            .chain((0..outer).map(|i| ring(self.outer_radius, i as f64 * step_out + 0.5 * step_in)))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct FlowerData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub heldout: Vec<ClassId>,
    pub classes: Vec<GaussianClass>,
}

/// Samples with labels `1..=k`, `n_per_class` per class, class after class.
fn sample_classes(classes: &[GaussianClass], n_per_class: usize, rng: &mut Rng, keep: impl Fn(ClassId) -> bool) -> Result<LabeledDataset> {
    let d = classes.first().map_or(0, |c| c.mean.len());
    let mut out = LabeledDataset::empty(d);
    for c in classes.iter().filter(|c| keep(c.id)) {
        for x in c.sample_n(n_per_class, rng)? {
            out.push(x, c.id)?;
        }
    }
    Ok(out)
}

pub fn generate_flower(spec: &FlowerSpec) -> Result<FlowerData> {
    spec.validate()?;
    let mut rng = derived_rng(spec.seed, 0);
    let classes: Vec<GaussianClass> = spec
        .means()
        .into_iter()
        .enumerate()
        .map(|(i, mean)| GaussianClass {
            id: i as ClassId + 1,
            mean,
            cov: sample_inverse_wishart(&spec.iw_scale, spec.iw_dof, &mut rng),
        })
        .collect();
    let mut ids: Vec<ClassId> = classes.iter().map(|c| c.id).collect();
    ids.shuffle(&mut derived_rng(spec.seed, 1));
    let mut heldout: Vec<ClassId> = ids[..spec.n_heldout].to_vec();
    heldout.sort_unstable();
    let held: BTreeSet<ClassId> = heldout.iter().copied().collect();
    let train = sample_classes(&classes, spec.samples_per_class, &mut derived_rng(spec.seed, 2), |id| {
        !held.contains(&id)
    })?;
    let test = sample_classes(&classes, spec.samples_per_class, &mut derived_rng(spec.seed, 3), |_| true)?;
    Ok(FlowerData {
        train,
        test,
        heldout,
        classes,
    })
}

/// Draws `k` classes from `niw` and `n_per_class` samples from each.
pub fn sample_niw_classes(k: usize, niw: &NiwParams, n_per_class: usize, seed: u64) -> Result<(LabeledDataset, Vec<GaussianClass>)> {
    let mut rng = derived_rng(seed, 0);
    let classes: Vec<GaussianClass> = (0..k)
        .map(|i| {
            let (mean, cov) = niw.sample(&mut rng);
            GaussianClass {
                id: i as ClassId + 1,
                mean,
                cov,
            }
        })
        .collect();
    let mut data = sample_classes(&classes, n_per_class, &mut derived_rng(seed, 1), |_| true)?;
    if k == 0 {
        data = LabeledDataset::empty(niw.dim());
    }
    Ok((data, classes))
}

pub fn generate_niw_classes(k: usize, niw: &NiwParams, n_per_class: usize, seed: u64) -> Result<LabeledDataset> {
    Ok(sample_niw_classes(k, niw, n_per_class, seed)?.0)
}

/// Per-class split keeping `round(fraction * n_j)` (halves up) samples of
/// each represented class for training; every sample of a held-out class
/// goes to the test set. Both outputs keep the original sample order.
pub fn stratified_split(
    data: &LabeledDataset,
    train_fraction: f64,
    heldout: &[ClassId],
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::param(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let present = data.class_counts();
    for h in heldout {
        if !present.contains_key(h) {
            return Err(Error::input(format!("held-out class {h} does not occur in the data")));
        }
    }
    let mut in_train = vec![false; data.len()];
    for (ci, id) in present.keys().enumerate() {
        if heldout.contains(id) {
            continue;
        }
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.labels()[i] == *id).collect();
        // tiny epsilon keeps products such as 0.7 * 5 on the intended side of .5
        let n_train = ((train_fraction * members.len() as f64) + 0.5 + 1e-9).floor() as usize;
        members.shuffle(&mut derived_rng(seed, ci as u64));
        for &i in &members[..n_train.min(members.len())] {
            in_train[i] = true;
        }
    }
    let train_idx: Vec<usize> = (0..data.len()).filter(|&i| in_train[i]).collect();
    let test_idx: Vec<usize> = (0..data.len()).filter(|&i| !in_train[i]).collect();
    Ok((data.permuted(&train_idx), data.permuted(&test_idx)))
}
