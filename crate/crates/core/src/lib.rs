//! Supervised quadratic feature analysis.
//!
//! Learns linear filters `F` (n×m, unit-norm columns) that maximize the summed
//! pairwise dissimilarity between class-conditional Gaussian statistics of the
//! projected features `z = Fᵀx`. Dissimilarities live in [`distances`]: the
//! Calvo-Oller lower bound on the Fisher-Rao distance, the exact zero-mean
//! Fisher-Rao distance on second moments, Bhattacharyya and Hellinger.
//!
//! The pieces, bottom up:
//!
//! - [`spd`]: SPD matrices, the Cholesky-reduced generalized eigensolver and the
//!   affine-invariant distance with its gradient.
//! - [`distances`]: dissimilarities between Gaussians and their gradients.
//! - [`stats`]: datasets, per-class moments, projection into feature space.
//! - [`trainer`]: the pairwise objective, L-BFGS on unit-norm filters, restarts
//!   and sequential pair learning.
//! - [`baselines`]: PCA, LDA and AMA-Gauss.
//! - [`evaluation`]: QDA, kNN, Bayes error (closed form and Monte-Carlo).
//! - [`toy`] and [`sweep`]: synthetic datasets and validation tables.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod distances;
mod error;
pub mod evaluation;
pub(crate) mod linalg;
pub mod spd;
pub mod stats;
pub mod sweep;
pub mod toy;
pub mod trainer;

pub use distances::{DistanceKind, GaussianParams};
pub use error::{Error, Result};
pub use spd::{GeneralizedSpectrum, SpdMatrix};
pub use stats::{ClassEnsemble, FeatureStats, LabeledDataset};
pub use trainer::{FilterBank, TrainConfig, TrainLog};
