//! Metrics, single-label baselines and the label-proportion experiment.

mod baselines;
mod experiment;
mod metrics;

pub use baselines::{logistic_fit, logistic_fit_detailed, logistic_objective, majority_vote, LogisticFit};
pub use experiment::{
    run_experiment, AggregateRow, ExperimentConfig, ExperimentResult, Method, ResultRow, RESULTS_HEADER,
};
pub use metrics::{accuracy, roc_auc, RocCurve};
