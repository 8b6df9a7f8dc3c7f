//! Known-class context shared by the particle engine, the Gibbs sampler and
//! the exact enumeration.

use serde::{Deserialize, Serialize};

use crate::data::{ClassId, LabeledDataset};
use crate::error::{Error, Result};
use crate::niw::GaussSuffStats;

/// How known classes enter the Chinese restaurant process counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorCounts {
    /// Use the number of training samples of each class.
    #[default]
    Actual,
    /// Every known class gets pseudo-count 1, i.e. all known classes are
    /// a priori equally likely regardless of how many samples were collected.
    Uniform,
}

impl std::str::FromStr for PriorCounts {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "actual" => Ok(PriorCounts::Actual),
            "uniform" => Ok(PriorCounts::Uniform),
            other => Err(Error::input(format!("unknown prior-count convention '{other}'"))),
        }
    }
}

/// A known class: its training statistics (for the predictive density) and
/// its pseudo-count (for the CRP prior). The two are deliberately decoupled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnownClass {
    pub id: ClassId,
    pub stats: GaussSuffStats,
    pub prior_count: f64,
}

pub fn known_classes(train: &LabeledDataset, counts: PriorCounts) -> Result<Vec<KnownClass>> {
    if train.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    Ok(train
        .class_stats()
        .into_iter()
        .map(|(id, stats)| {
            let prior_count = match counts {
                PriorCounts::Actual => stats.n() as f64,
                PriorCounts::Uniform => 1.0,
            };
            KnownClass {
                id,
                stats,
                prior_count,
            }
        })
        .collect())
}
