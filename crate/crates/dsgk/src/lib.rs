//! Domain adaptation on the unit hypersphere.
//!
//! The engine trains a shared classifier on a labeled source domain and an
//! unlabeled target domain. Batches of classifier outputs from the two
//! domains are embedded on a unit hypersphere; the squared geodesic distance
//! between the embeddings, scaled through a covariance-gap Gaussian kernel,
//! is the marginal discrepancy loss. Confident target predictions become
//! pseudo labels through an easy-to-hard threshold schedule, and a per-class
//! version of the geodesic loss aligns the conditional distributions. All
//! gradients are derived by hand and validated against central finite
//! differences.
//!
//! Modules mirror the moving parts:
//!
//! - [`sphere`]: projection, Log/Exp maps, geodesic distance.
//! - [`moments`]: batch mean/covariance and the covariance-gap RBF kernel.
//! - [`losses`]: cross-entropy, sphere-kernel geodesic losses (marginal and
//!   categorical), CORAL and linear-MMD baselines, the combined objective.
//! - [`gradcheck`]: the finite-difference gradient verifier.
//! - [`network`]: the classifier with hand-derived backpropagation.
//! - [`pseudo`]: confidence-threshold pseudo-label selection and schedules.
//! - [`data`]: synthetic domain-shift tasks, feature CSV files, paired
//!   batch sampling.
//! - [`harness`]: the training loop, evaluation, and the metrics stream.
//! - [`experiments`]: ablations, hyperparameter sweeps by divergence proxy,
//!   and discrepancy-loss comparisons.

pub mod data;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod moments;
pub mod network;
pub mod pseudo;
pub mod sphere;

pub use error::{Error, Result};
pub use losses::{EmbeddingMode, FeaturesForLoss, LossBreakdown};
pub use moments::FeatureBatch;
pub use network::{NetworkParams, OptimizerKind};
