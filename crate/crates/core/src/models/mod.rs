//! Multi-annotator models and their EM training loop.
//!
//! All three kinds share one likelihood: a logistic prior on the true label
//! and Gaussian annotator labels with input-dependent deviation. They
//! differ in what is learned and how the classifier is regularized:
//!
//! | kind          | classifier prior      | annotator noise      |
//! |---------------|-----------------------|----------------------|
//! | `Id`          | none                  | `σ_t(x)`             |
//! | `Lgp`         | `exp(−η ξᵀAξ)`        | `σ_t(x)`             |
//! | `MlOriginal`  | none                  | constant `σ_t`       |

mod objective;
mod persist;
mod select;

use std::fmt;
use std::str::FromStr;

use log::{debug, warn};
use ndarray::{Array1, Array2, ArrayView1};

pub use objective::{
    e_step_id, e_step_lgp, m_step_objective_id, m_step_objective_lgp, observed_gradient, observed_loglik,
    ObjectiveGradient,
};
pub use select::{default_eta_grid, select_eta, EtaSelection};

use crate::annotators::{label_loglik, sigma_of_activation, AnnotatorParams, SIGMA_MIN};
use crate::data::{LabelMatrix, ScalingParams};
use crate::error::{Error, Result};
use crate::graph::GraphPrior;
use crate::math::{log_logistic_pair, log_sum_exp2, logistic};
use crate::optim::{maximize, OptimConfig, OptimStatus};
use objective::{activation, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Id,
    Lgp,
    MlOriginal,
}

impl ModelKind {
    /// Whether annotator noise depends on the input.
    pub fn learns_noise_weights(self) -> bool {
        self != ModelKind::MlOriginal
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Id => "ID",
            ModelKind::Lgp => "LGP",
            ModelKind::MlOriginal => "ML-ORIGINAL",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "id" => Ok(ModelKind::Id),
            "lgp" => Ok(ModelKind::Lgp),
            "ml-original" => Ok(ModelKind::MlOriginal),
            other => Err(Error::invalid(format!(
                "unknown model kind {other:?} (expected id, lgp or ml-original)"
            ))),
        }
    }
}

/// Logistic model `p(z = 1 | x) = logistic(coefᵀx + intercept)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticParams {
    pub coef: Array1<f64>,
    pub intercept: f64,
}

/// `(α, β)` of the independent model.
pub type IdParams = LogisticParams;
/// `(ξ, ξ0)` of the graph-prior model; the intercept is not penalized.
pub type LgpParams = LogisticParams;

impl LogisticParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            coef: Array1::zeros(dim),
            intercept: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.coef.len()
    }

    pub fn activation(&self, x: ArrayView1<'_, f64>) -> f64 {
        activation(&self.coef, self.intercept, x)
    }

    pub fn prob(&self, x: ArrayView1<'_, f64>) -> f64 {
        logistic(self.activation(x))
    }
}

/// `p̃(z_i = 1)` per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub p1: Vec<f64>,
}

impl Posterior {
    /// `p̃(z=1) − p̃(z=0)`.
    pub fn delta(&self, i: usize) -> f64 {
        2.0 * self.p1[i] - 1.0
    }

    /// Thresholded labels; ties go to class 1.
    pub fn hard_labels(&self) -> Vec<u8> {
        self.p1.iter().map(|&p| u8::from(p >= 0.5)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Stop when `Σ_t ‖Δw_t‖² + Δγ_t²` between EM iterations drops below this.
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Secondary stop on the absolute change of the observed objective.
    pub objective_tolerance: f64,
    /// Inner quasi-Newton settings for each M-step.
    pub optim: OptimConfig,
    pub sigma_min: f64,
    /// L2 penalty on annotator parameters; 0 disables it.
    pub annotator_ridge: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_iterations: 200,
            objective_tolerance: 1e-9,
            optim: OptimConfig::default(),
            sigma_min: SIGMA_MIN,
            annotator_ridge: 0.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max EM iterations must be positive"));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < 1.0) {
            return Err(Error::invalid(format!("sigma_min must be in (0, 1), got {}", self.sigma_min)));
        }
        if !(self.annotator_ridge >= 0.0) {
            return Err(Error::invalid("annotator ridge must be non-negative"));
        }
        self.optim.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    /// Completed M-steps.
    pub iterations: usize,
    pub final_objective: f64,
    pub converged: bool,
    /// Observed-data objective after each M-step.
    pub objective_history: Vec<f64>,
    /// Whether the history never decreased by more than 1e-8.
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub classifier: LogisticParams,
    pub annotators: Vec<AnnotatorParams>,
    /// Posterior over the training points at the final parameters.
    pub posterior: Posterior,
    /// Maps raw features to the space the model was trained in.
    pub scaling: ScalingParams,
    pub eta: f64,
    pub bandwidth: Option<f64>,
    pub sigma_min: f64,
    pub diagnostics: FitDiagnostics,
}

impl TrainedModel {
    pub fn dim(&self) -> usize {
        self.classifier.dim()
    }

    pub fn num_annotators(&self) -> usize {
        self.annotators.len()
    }

    /// `σ_t(x)` for standardized `x`.
    pub fn sigma(&self, annotator: usize, x: ArrayView1<'_, f64>) -> f64 {
        crate::annotators::sigma_floored(&self.annotators[annotator], x, self.sigma_min)
    }

    /// Predictions for raw (unscaled) rows, optionally with new annotator labels.
    pub fn predict_raw(&self, x: &Array2<f64>, labels: Option<&LabelMatrix>) -> Result<Vec<f64>> {
        let scaled = self.scaling.transform(x)?;
        if let Some(l) = labels {
            if l.num_points() != x.nrows() {
                return Err(Error::dim(format!("{} label rows for {} points", l.num_points(), x.nrows())));
            }
        }
        (0..scaled.nrows())
            .map(|i| predict(self, scaled.row(i), labels.map(|l| l.labels_of(i))))
            .collect()
    }
}

/// Flat parameter vector: classifier weights, intercept, then per annotator
/// `w_t` (omitted when noise is constant) and `γ_t`.
struct Layout {
    d: usize,
    t: usize,
    free_w: bool,
}

impl Layout {
    fn block(&self) -> usize {
        if self.free_w {
            self.d + 1
        } else {
            1
        }
    }

    fn len(&self) -> usize {
        self.d + 1 + self.t * self.block()
    }

    fn pack(&self, c: &LogisticParams, a: &[AnnotatorParams]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend(c.coef.iter());
        v.push(c.intercept);
        for p in a {
            if self.free_w {
                v.extend(p.w.iter());
            }
            v.push(p.gamma);
        }
        v
    }

    fn unpack(&self, v: &[f64]) -> (LogisticParams, Vec<AnnotatorParams>) {
        let d = self.d;
        let c = LogisticParams {
            coef: Array1::from(v[..d].to_vec()),
            intercept: v[d],
        };
        let a = v[d + 1..]
            .chunks(self.block())
            .map(|chunk| AnnotatorParams {
                w: if self.free_w {
                    Array1::from(chunk[..d].to_vec())
                } else {
                    Array1::zeros(d)
                },
                gamma: chunk[chunk.len() - 1],
            })
            .collect();
        (c, a)
    }

    fn pack_grad(&self, g: &ObjectiveGradient, out: &mut [f64]) {
        let d = self.d;
        out[..d].copy_from_slice(g.coef.as_slice().unwrap());
        out[d] = g.intercept;
        for (t, chunk) in out[d + 1..].chunks_mut(self.block()).enumerate() {
            if self.free_w {
                chunk[..d].copy_from_slice(g.w[t].as_slice().unwrap());
            }
            chunk[chunk.len() - 1] = g.gamma[t];
        }
    }
}

/// Laplace-smoothed vote share `(ones + 1) / (|T_i| + 2)`; 0.5 when unlabeled.
pub fn soft_majority_vote(labels: &LabelMatrix) -> Posterior {
    let p1 = (0..labels.num_points())
        .map(|i| {
            let l = labels.labels_of(i);
            let ones = l.iter().filter(|&&(_, y)| y == 1).count();
            (ones as f64 + 1.0) / (l.len() as f64 + 2.0)
        })
        .collect();
    Posterior { p1 }
}

fn annotator_change(old: &[AnnotatorParams], new: &[AnnotatorParams]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(a, b)| {
            let dw = &a.w - &b.w;
            dw.dot(&dw) + (a.gamma - b.gamma).powi(2)
        })
        .sum()
}

/// Trains a model by EM.
///
/// Annotator parameters start at zero (`σ = 0.5`) and the first M-step runs
/// against a smoothed majority-vote posterior. Each later cycle is an E-step
/// followed by a quasi-Newton M-step. Training stops when the annotator
/// parameters move less than `epsilon` (squared norm), when the observed
/// objective changes by less than `objective_tolerance`, or after
/// `max_iterations` M-steps; only the last case reports `converged = false`.
pub fn fit(
    kind: ModelKind,
    x: &Array2<f64>,
    labels: &LabelMatrix,
    prior: Option<&GraphPrior>,
    config: &FitConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    let x = x.as_standard_layout().into_owned();
    let (n, d) = x.dim();
    let t = labels.num_annotators();
    if labels.num_points() != n {
        return Err(Error::dim(format!("{} label rows for {n} data points", labels.num_points())));
    }
    if labels.labeled_points().next().is_none() {
        return Err(Error::invalid("no point carries an annotator label"));
    }
    let mut problem = Problem::new(&x, labels);
    problem.sigma_min = config.sigma_min;
    problem.annotator_ridge = config.annotator_ridge;
    let eta = match kind {
        ModelKind::Lgp => {
            let g = prior.ok_or_else(|| Error::invalid("the logistic graph-prior model needs a graph prior"))?;
            problem.prior = Some((&g.prior_matrix, g.eta));
            g.eta
        }
        _ => 0.0,
    };
    let layout = Layout {
        d,
        t,
        free_w: kind.learns_noise_weights(),
    };

    let mut classifier = LogisticParams::zeros(d);
    let mut annotators = vec![AnnotatorParams::zeros(d); t];
    problem.check(&classifier, &annotators)?;
    let mut posterior = soft_majority_vote(labels);
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;

    for iteration in 1..=config.max_iterations {
        let start = layout.pack(&classifier, &annotators);
        let result = maximize(
            |v, grad| {
                let (c, a) = layout.unpack(v);
                let og = problem.expected(&c, &a, &posterior);
                layout.pack_grad(&og, grad);
                og.value
            },
            start,
            &config.optim,
        )?;
        if result.status == OptimStatus::LineSearchFailed {
            debug!("M-step {iteration}: line search failed after {} steps", result.iterations);
        }
        let (new_c, new_a) = layout.unpack(&result.x);
        let objective = problem.observed(&new_c, &new_a);
        if !objective.is_finite() {
            return Err(Error::Numerical(format!(
                "observed objective became {objective} at EM iteration {iteration}"
            )));
        }
        let change = annotator_change(&annotators, &new_a);
        classifier = new_c;
        annotators = new_a;
        let stalled = history
            .last()
            .is_some_and(|prev| (objective - prev).abs() < config.objective_tolerance);
        history.push(objective);
        debug!("EM {iteration}: objective {objective:.10}, parameter change {change:.3e}");
        if change < config.epsilon || stalled {
            converged = true;
            break;
        }
        if iteration < config.max_iterations {
            posterior = problem.e_step(&classifier, &annotators);
        }
    }

    let monotone = history.windows(2).all(|w| w[1] >= w[0] - 1e-8);
    if !monotone {
        warn!("observed objective decreased during EM: {history:?}");
    }
    let posterior = problem.e_step(&classifier, &annotators);
    Ok(TrainedModel {
        kind,
        classifier,
        annotators,
        posterior,
        scaling: ScalingParams::identity(d),
        eta,
        bandwidth: prior.filter(|_| kind == ModelKind::Lgp).map(|g| g.bandwidth),
        sigma_min: config.sigma_min,
        diagnostics: FitDiagnostics {
            iterations: history.len(),
            final_objective: *history.last().expect("at least one M-step"),
            converged,
            objective_history: history,
            monotone,
        },
    })
}

/// `p(z = 1)` for a standardized point. Without labels this is the
/// classifier prior; with labels it is the one-point E-step posterior.
pub fn predict(model: &TrainedModel, x_new: ArrayView1<'_, f64>, new_labels: Option<&[(usize, u8)]>) -> Result<f64> {
    if x_new.len() != model.dim() {
        return Err(Error::dim(format!(
            "point has {} features, model expects {}",
            x_new.len(),
            model.dim()
        )));
    }
    let a = activation(&model.classifier.coef, model.classifier.intercept, x_new);
    let labels = match new_labels {
        Some(l) if !l.is_empty() => l,
        _ => return Ok(logistic(a)),
    };
    let (mut m1, mut m0) = log_logistic_pair(a);
    for &(t, y) in labels {
        let p = model.annotators.get(t).ok_or_else(|| {
            Error::dim(format!("annotator {t} out of range for {} annotators", model.num_annotators()))
        })?;
        if y > 1 {
            return Err(Error::invalid(format!("label {y} is not 0 or 1")));
        }
        let (s, _) = sigma_of_activation(activation(&p.w, p.gamma, x_new), model.sigma_min);
        m1 += label_loglik(y, 1, s);
        m0 += label_loglik(y, 0, s);
    }
    Ok((m1 - log_sum_exp2(m0, m1)).exp())
}

#[cfg(test)]
mod tests;
