use ndarray::{Array1, Array2};

use crate::data::LabelMatrix;
use crate::error::{Error, Result};
use crate::math::{dot, log_logistic_pair, logistic};
use crate::models::LogisticParams;
use crate::optim::{maximize, OptimConfig, OptimStatus};

/// Modal label per point, ties to 1; `None` for unlabeled points.
pub fn majority_vote(labels: &LabelMatrix) -> Vec<Option<u8>> {
    (0..labels.num_points())
        .map(|i| {
            let l = labels.labels_of(i);
            if l.is_empty() {
                return None;
            }
            let ones = l.iter().filter(|&&(_, y)| y == 1).count();
            Some(u8::from(2 * ones >= l.len()))
        })
        .collect()
}

/// Ridge-penalized Bernoulli log-likelihood and its gradient, with the
/// intercept last in the gradient vector. The intercept is not penalized.
pub fn logistic_objective(x: &Array2<f64>, y: &[u8], ridge: f64, params: &LogisticParams) -> (f64, Vec<f64>) {
    let d = x.ncols();
    let coef = params.coef.as_slice().expect("contiguous");
    let mut grad = vec![0.0; d + 1];
    let mut value = 0.0;
    for (row, &yi) in x.rows().into_iter().zip(y) {
        let xs = row.to_slice().expect("standard layout");
        let a = dot(coef, xs) + params.intercept;
        let (l1, l0) = log_logistic_pair(a);
        value += if yi == 1 { l1 } else { l0 };
        let r = f64::from(yi) - logistic(a);
        grad[..d].iter_mut().zip(xs).for_each(|(g, x)| *g += r * x);
        grad[d] += r;
    }
    value -= 0.5 * ridge * dot(coef, coef);
    grad[..d].iter_mut().zip(coef).for_each(|(g, c)| *g -= ridge * c);
    (value, grad)
}

/// Gradient norm a fit must reach to count as converged.
pub const GRADIENT_CERTIFICATE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub params: LogisticParams,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

/// Ridge-penalized logistic regression on `{0,1}` labels.
pub fn logistic_fit(x: &Array2<f64>, y: &[u8], ridge: f64) -> Result<LogisticParams> {
    logistic_fit_detailed(x, y, ridge).map(|f| f.params)
}

pub fn logistic_fit_detailed(x: &Array2<f64>, y: &[u8], ridge: f64) -> Result<LogisticFit> {
    if x.nrows() != y.len() {
        return Err(Error::dim(format!("{} rows for {} labels", x.nrows(), y.len())));
    }
    if let Some(bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::invalid(format!("label {bad} is not 0 or 1")));
    }
    let ones = y.iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::invalid("logistic regression needs both classes"));
    }
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge must be non-negative"));
    }
    let x = x.as_standard_layout().into_owned();
    let d = x.ncols();
    let cfg = OptimConfig {
        max_iterations: 5000,
        gradient_tolerance: 1e-7,
        value_tolerance: 0.0,
        ..Default::default()
    };
    let unpack = |v: &[f64]| LogisticParams {
        coef: Array1::from(v[..d].to_vec()),
        intercept: v[d],
    };
    let result = maximize(
        |v, g| {
            let (value, grad) = logistic_objective(&x, y, ridge, &unpack(v));
            g.copy_from_slice(&grad);
            value
        },
        vec![0.0; d + 1],
        &cfg,
    )?;
    if result.status != OptimStatus::Converged {
        log::debug!(
            "logistic fit stopped with {:?} after {} iterations, gradient norm {:e}",
            result.status,
            result.iterations,
            result.gradient_norm()
        );
    }
    Ok(LogisticFit {
        params: unpack(&result.x),
        iterations: result.iterations,
        gradient_norm: result.gradient_norm(),
        converged: result.gradient_norm() <= GRADIENT_CERTIFICATE,
    })
}
