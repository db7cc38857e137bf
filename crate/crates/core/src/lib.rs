//! Semi-supervised learning from multiple noisy annotators.
//!
//! Each annotator `t` is modeled as a Gaussian around the hidden true label
//! with an input-dependent standard deviation `σ_t(x) = logistic(w_tᵀx + γ_t)`,
//! so an annotator can be reliable in one region of feature space and noisy
//! in another. The true label follows a logistic classifier. Two classifier
//! priors are provided:
//!
//! * [`ModelKind::Id`]: independent logistic prior; points nobody labeled
//!   carry no information.
//! * [`ModelKind::Lgp`]: logistic prior whose weight vector `ξ` is drawn
//!   from a graph-Laplacian prior `exp(-η ξᵀ XᵀΔX ξ)` built over labeled and
//!   unlabeled points alike, which is how unlabeled data shapes the fit.
//!
//! A supervised baseline with constant per-annotator noise
//! ([`ModelKind::MlOriginal`]) shares the same machinery.
//!
//! Training is EM with limited-memory quasi-Newton M-steps ([`optim`]).
//! The [`sim`] and [`eval`] modules reproduce the cluster-expert labeler
//! simulation and the label-proportion sweep used to compare methods.

pub mod annotators;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod models;
pub mod optim;
pub mod sim;

mod math;

pub use annotators::{AnnotatorParams, SIGMA_MIN};
pub use data::{Dataset, LabelMatrix, ScalingParams};
pub use error::{Error, Result};
pub use eval::{ExperimentConfig, ExperimentResult, Method};
pub use graph::{GraphConfig, GraphPrior};
pub use models::{FitConfig, LogisticParams, ModelKind, Posterior, TrainedModel};
pub use optim::{OptimConfig, OptimStatus};
pub use sim::SimConfig;
