//! Online classification against a nonexhaustive set of known classes.
//!
//! Each streamed sample is assigned to a known class, to a cluster that was
//! discovered earlier in the stream, or to a brand-new cluster. Classes are
//! modeled as Gaussians with a Normal x Inverse-Wishart base distribution and
//! a Dirichlet-process (Chinese restaurant process) prior over class
//! membership. Online inference runs a sequential importance resampling
//! particle filter that enumerates every possible label per particle and
//! downsamples with the optimal-threshold scheme of Fearnhead and Clifford.
//!
//! Module map:
//!
//! * [`niw`] conjugate Normal x Inverse-Wishart bookkeeping and Student-t densities.
//! * [`crp`] Chinese restaurant process weights, simulation, stick breaking and
//!   calibration of the concentration parameter.
//! * [`prior_fit`] offline estimation of the base-distribution hyperparameters.
//! * [`sir`] the streaming particle engine.
//! * [`gibbs`] collapsed Gibbs sampler and exact partition enumeration.
//! * [`datagen`] synthetic data (the two-ring "flower" set and NIW classes).
//! * [`eval`] cluster-to-class mapping, accuracy metrics, replicated orderings.
//! * [`io`] CSV datasets and JSON documents.
//! * [`plot`] confidence ellipses for plot output.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crp;
pub mod data;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod gibbs;
pub mod io;
pub mod linalg;
pub mod model;
pub mod niw;
pub mod optim;
pub mod plot;
pub mod prior_fit;
pub mod rng;
pub mod sir;

pub use data::LabeledDataset;
pub use error::{Error, Result};
pub use niw::{GaussSuffStats, NiwParams, StudentT};

/// Version string embedded in every emitted document.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
