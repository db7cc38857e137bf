//! E-steps, expected complete-data objectives and the observed-data
//! log-likelihood, shared by every model kind.
//!
//! Only points with at least one annotator label enter the sums: an
//! unlabeled point's marginal over its true label is exactly 1, so it
//! contributes nothing to the observed likelihood, and EM over the labeled
//! latent labels alone ascends the same objective. Unlabeled data reaches
//! the logistic-prior model through the graph prior matrix instead.

use ndarray::{Array1, Array2, ArrayView1};

use super::{LogisticParams, ModelKind, Posterior};
use crate::annotators::{activation_grad, label_loglik, sigma_of_activation, AnnotatorParams};
use crate::data::LabelMatrix;
use crate::error::{Error, Result};
use crate::graph::quad_form;
use crate::math::{dot, log_logistic_pair, log_sum_exp2, logistic};

/// Objective value with its gradient split by parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGradient {
    pub value: f64,
    /// Gradient for the classifier weights (`α` or `ξ`).
    pub coef: Array1<f64>,
    /// Gradient for the classifier intercept (`β` or `ξ0`).
    pub intercept: f64,
    pub w: Vec<Array1<f64>>,
    pub gamma: Vec<f64>,
}

impl ObjectiveGradient {
    fn zeros(d: usize, t: usize) -> Self {
        Self {
            value: 0.0,
            coef: Array1::zeros(d),
            intercept: 0.0,
            w: vec![Array1::zeros(d); t],
            gamma: vec![0.0; t],
        }
    }
}

/// Everything an objective needs besides the parameters.
#[derive(Clone, Copy)]
pub(crate) struct Problem<'a> {
    pub x: &'a Array2<f64>,
    pub labels: &'a LabelMatrix,
    /// `(A, η)` for the logistic-prior model.
    pub prior: Option<(&'a Array2<f64>, f64)>,
    pub sigma_min: f64,
    /// `ρ` in the penalty `−ρ/2 Σ_t (‖w_t‖² + γ_t²)`.
    pub annotator_ridge: f64,
}

impl<'a> Problem<'a> {
    pub fn new(x: &'a Array2<f64>, labels: &'a LabelMatrix) -> Self {
        Self {
            x,
            labels,
            prior: None,
            sigma_min: crate::annotators::SIGMA_MIN,
            annotator_ridge: 0.0,
        }
    }

    pub fn check(&self, classifier: &LogisticParams, annotators: &[AnnotatorParams]) -> Result<()> {
        let (n, d) = self.x.dim();
        if self.labels.num_points() != n {
            return Err(Error::dim(format!(
                "{} labeled rows for {n} data points",
                self.labels.num_points()
            )));
        }
        if classifier.coef.len() != d {
            return Err(Error::dim(format!("classifier has {} weights for {d} features", classifier.coef.len())));
        }
        if annotators.len() != self.labels.num_annotators() {
            return Err(Error::dim(format!(
                "{} annotator parameter sets for {} annotators",
                annotators.len(),
                self.labels.num_annotators()
            )));
        }
        if let Some(a) = annotators.iter().position(|p| p.dim() != d) {
            return Err(Error::dim(format!("annotator {a} has {} weights for {d} features", annotators[a].dim())));
        }
        if let Some((a, _)) = self.prior {
            if a.dim() != (d, d) {
                return Err(Error::dim(format!("prior matrix is {:?}, expected {d}x{d}", a.dim())));
            }
        }
        Ok(())
    }

    fn row(&self, i: usize) -> ArrayView1<'a, f64> {
        self.x.row(i)
    }

    fn prior_value(&self, coef: &Array1<f64>) -> f64 {
        match self.prior {
            Some((a, eta)) if eta != 0.0 => eta * quad_form(a, coef.as_slice().unwrap()),
            _ => 0.0,
        }
    }

    fn ridge_value(&self, annotators: &[AnnotatorParams]) -> f64 {
        if self.annotator_ridge == 0.0 {
            return 0.0;
        }
        let sq: f64 = annotators.iter().map(|p| p.w.dot(&p.w) + p.gamma * p.gamma).sum();
        0.5 * self.annotator_ridge * sq
    }

    /// Log joint masses `(ln p(z=0, y_i | x_i), ln p(z=1, y_i | x_i))`.
    fn log_masses(&self, i: usize, classifier: &LogisticParams, annotators: &[AnnotatorParams]) -> (f64, f64) {
        let xi = self.row(i);
        let (mut m1, mut m0) = log_logistic_pair(activation(&classifier.coef, classifier.intercept, xi));
        for &(t, y) in self.labels.labels_of(i) {
            let (s, _) = sigma_of_activation(activation(&annotators[t].w, annotators[t].gamma, xi), self.sigma_min);
            m1 += label_loglik(y, 1, s);
            m0 += label_loglik(y, 0, s);
        }
        (m0, m1)
    }

    pub fn e_step(&self, classifier: &LogisticParams, annotators: &[AnnotatorParams]) -> Posterior {
        let p1 = (0..self.x.nrows())
            .map(|i| {
                if self.labels.is_labeled(i) {
                    let (m0, m1) = self.log_masses(i, classifier, annotators);
                    (m1 - log_sum_exp2(m0, m1)).exp()
                } else {
                    logistic(activation(&classifier.coef, classifier.intercept, self.row(i)))
                }
            })
            .collect();
        Posterior { p1 }
    }

    /// Observed-data log-likelihood, minus the graph and ridge penalties.
    pub fn observed(&self, classifier: &LogisticParams, annotators: &[AnnotatorParams]) -> f64 {
        let mut total = 0.0;
        for i in self.labels.labeled_points() {
            let (m0, m1) = self.log_masses(i, classifier, annotators);
            total += log_sum_exp2(m0, m1);
        }
        total - self.prior_value(&classifier.coef) - self.ridge_value(annotators)
    }

    /// Expected complete-data log-likelihood under `posterior`, with
    /// penalties, and its gradient.
    pub fn expected(
        &self,
        classifier: &LogisticParams,
        annotators: &[AnnotatorParams],
        posterior: &Posterior,
    ) -> ObjectiveGradient {
        let d = self.x.ncols();
        let mut out = ObjectiveGradient::zeros(d, annotators.len());
        let coef_g = out.coef.as_slice_mut().unwrap();
        for i in self.labels.labeled_points() {
            let xi = self.row(i);
            let xs = xi.as_slice().unwrap();
            let p1 = posterior.p1[i];
            let p0 = 1.0 - p1;
            let a = activation(&classifier.coef, classifier.intercept, xi);
            let (l1, l0) = log_logistic_pair(a);
            out.value += weighted(p1, l1) + weighted(p0, l0);
            let g = p1 - logistic(a);
            coef_g.iter_mut().zip(xs).for_each(|(c, x)| *c += g * x);
            out.intercept += g;

            for &(t, y) in self.labels.labels_of(i) {
                let p = &annotators[t];
                let (s, clamped) = sigma_of_activation(activation(&p.w, p.gamma, xi), self.sigma_min);
                out.value += p1 * label_loglik(y, 1, s) + p0 * label_loglik(y, 0, s);
                let g = p1 * activation_grad(y, 1, s, clamped) + p0 * activation_grad(y, 0, s, clamped);
                if g != 0.0 {
                    out.w[t].iter_mut().zip(xs).for_each(|(w, x)| *w += g * x);
                    out.gamma[t] += g;
                }
            }
        }
        self.apply_penalties(classifier, annotators, &mut out);
        out
    }

    /// Gradient of [`Problem::observed`] in the direct marginal form:
    /// each labeled point contributes the ratio of the derivative of its
    /// joint mass to the mass itself, evaluated without an E-step.
    pub fn observed_gradient(&self, classifier: &LogisticParams, annotators: &[AnnotatorParams]) -> ObjectiveGradient {
        let d = self.x.ncols();
        let mut out = ObjectiveGradient::zeros(d, annotators.len());
        for i in self.labels.labeled_points() {
            let xi = self.row(i);
            let prob1 = logistic(activation(&classifier.coef, classifier.intercept, xi));
            let prob0 = 1.0 - prob1;
            let labels = self.labels.labels_of(i);
            let sig: Vec<(f64, bool)> = labels
                .iter()
                .map(|&(t, _)| sigma_of_activation(activation(&annotators[t].w, annotators[t].gamma, xi), self.sigma_min))
                .collect();
            // Π_t α(y_t; θ_t) for each z, rescaled by a common factor.
            let (mut ln1, mut ln0) = (0.0, 0.0);
            for (&(_, y), &(s, _)) in labels.iter().zip(&sig) {
                ln1 += label_loglik(y, 1, s);
                ln0 += label_loglik(y, 0, s);
            }
            let top = ln1.max(ln0);
            let (lik1, lik0) = ((ln1 - top).exp(), (ln0 - top).exp());
            let mass = prob1 * lik1 + prob0 * lik0;
            out.value += mass.ln() + top;

            // ∂p(z=1)/∂a = p(1 − p) = −∂p(z=0)/∂a.
            let dprob = prob1 * prob0;
            let g = dprob * (lik1 - lik0) / mass;
            out.coef.scaled_add(g, &xi);
            out.intercept += g;

            // ∂α_s/∂a_s = α_s · ∂ln α_s/∂a_s; the other factors stay in the product.
            let (r1, r0) = (prob1 * lik1 / mass, prob0 * lik0 / mass);
            for (&(t, y), &(s, clamped)) in labels.iter().zip(&sig) {
                let g = r1 * activation_grad(y, 1, s, clamped) + r0 * activation_grad(y, 0, s, clamped);
                out.w[t].scaled_add(g, &xi);
                out.gamma[t] += g;
            }
        }
        self.apply_penalties(classifier, annotators, &mut out);
        out
    }

    fn apply_penalties(&self, classifier: &LogisticParams, annotators: &[AnnotatorParams], out: &mut ObjectiveGradient) {
        if let Some((a, eta)) = self.prior {
            if eta != 0.0 {
                out.value -= self.prior_value(&classifier.coef);
                out.coef.scaled_add(-2.0 * eta, &a.dot(&classifier.coef));
            }
        }
        if self.annotator_ridge != 0.0 {
            out.value -= self.ridge_value(annotators);
            for (t, p) in annotators.iter().enumerate() {
                out.w[t].scaled_add(-self.annotator_ridge, &p.w);
                out.gamma[t] -= self.annotator_ridge * p.gamma;
            }
        }
    }
}

/// `p · v` with `0 · (−∞) = 0`.
#[inline]
fn weighted(p: f64, v: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * v
    }
}

#[inline]
pub(crate) fn activation(w: &Array1<f64>, b: f64, x: ArrayView1<'_, f64>) -> f64 {
    match (w.as_slice(), x.as_slice()) {
        (Some(ws), Some(xs)) => dot(ws, xs) + b,
        _ => w.dot(&x) + b,
    }
}

fn problem<'a>(
    kind: ModelKind,
    x: &'a Array2<f64>,
    labels: &'a LabelMatrix,
    prior: Option<&'a crate::graph::GraphPrior>,
) -> Result<Problem<'a>> {
    let mut p = Problem::new(x, labels);
    if kind == ModelKind::Lgp {
        let g = prior.ok_or_else(|| Error::invalid("the logistic graph-prior model needs a graph prior"))?;
        p.prior = Some((&g.prior_matrix, g.eta));
    }
    Ok(p)
}

/// E-step for the independent logistic model: `p̃(z_i = 1)` for every point.
pub fn e_step_id(
    params: &LogisticParams,
    annotators: &[AnnotatorParams],
    x: &Array2<f64>,
    labels: &LabelMatrix,
) -> Result<Posterior> {
    let p = Problem::new(x, labels);
    p.check(params, annotators)?;
    Ok(p.e_step(params, annotators))
}

/// E-step for the logistic graph-prior model. The prior on `ξ` does not
/// depend on `z_i` and cancels, so this has the same form as the ID E-step.
pub fn e_step_lgp(
    params: &LogisticParams,
    annotators: &[AnnotatorParams],
    x: &Array2<f64>,
    labels: &LabelMatrix,
) -> Result<Posterior> {
    e_step_id(params, annotators, x, labels)
}

fn check_posterior(posterior: &Posterior, n: usize) -> Result<()> {
    if posterior.p1.len() != n {
        return Err(Error::dim(format!("posterior has {} entries for {n} points", posterior.p1.len())));
    }
    Ok(())
}

pub fn m_step_objective_id(
    params: &LogisticParams,
    annotators: &[AnnotatorParams],
    x: &Array2<f64>,
    labels: &LabelMatrix,
    posterior: &Posterior,
) -> Result<ObjectiveGradient> {
    let p = Problem::new(x, labels);
    p.check(params, annotators)?;
    check_posterior(posterior, x.nrows())?;
    Ok(p.expected(params, annotators, posterior))
}

pub fn m_step_objective_lgp(
    params: &LogisticParams,
    annotators: &[AnnotatorParams],
    x: &Array2<f64>,
    labels: &LabelMatrix,
    prior: &crate::graph::GraphPrior,
    posterior: &Posterior,
) -> Result<ObjectiveGradient> {
    let p = problem(ModelKind::Lgp, x, labels, Some(prior))?;
    p.check(params, annotators)?;
    check_posterior(posterior, x.nrows())?;
    Ok(p.expected(params, annotators, posterior))
}

/// `ln p(Y_L | X)` (ID, ML-original) or `ln p(Y_L, ξ | X)` up to the prior's
/// normalizer (LGP), marginalizing each true label exactly.
pub fn observed_loglik(
    kind: ModelKind,
    params: &LogisticParams,
    annotators: &[AnnotatorParams],
    x: &Array2<f64>,
    labels: &LabelMatrix,
    prior: Option<&crate::graph::GraphPrior>,
) -> Result<f64> {
    let p = problem(kind, x, labels, prior)?;
    p.check(params, annotators)?;
    Ok(p.observed(params, annotators))
}

/// Gradient of [`observed_loglik`] computed directly from the marginal.
pub fn observed_gradient(
    kind: ModelKind,
    params: &LogisticParams,
    annotators: &[AnnotatorParams],
    x: &Array2<f64>,
    labels: &LabelMatrix,
    prior: Option<&crate::graph::GraphPrior>,
) -> Result<ObjectiveGradient> {
    let p = problem(kind, x, labels, prior)?;
    p.check(params, annotators)?;
    Ok(p.observed_gradient(params, annotators))
}
