//! Input-dependent annotator noise.
//!
//! Annotator `t` reports `y ~ N(z, σ_t(x)²)` around the true label `z`, with
//! `σ_t(x) = logistic(w_tᵀx + γ_t)` read as a standard deviation. A small
//! `σ_t` over a region means the annotator is an expert there.
//!
//! `σ` is floored at [`SIGMA_MIN`]: without a floor the density of a matching
//! label grows without bound as `σ → 0`. The floor is flat, so its gradient
//! with respect to `(w_t, γ_t)` is zero while clamped.

use ndarray::{Array1, ArrayView1};

use crate::math::{dot, logistic};

/// Lower bound on an annotator's noise standard deviation.
pub const SIGMA_MIN: f64 = 1e-3;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatorParams {
    pub w: Array1<f64>,
    pub gamma: f64,
}

impl AnnotatorParams {
    /// `w = 0, γ = 0`: `σ = 0.5` everywhere.
    pub fn zeros(dim: usize) -> Self {
        Self {
            w: Array1::zeros(dim),
            gamma: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    fn activation(&self, x: ArrayView1<'_, f64>) -> f64 {
        let w = self.w.as_slice().expect("contiguous");
        match x.as_slice() {
            Some(xs) => dot(w, xs) + self.gamma,
            None => self.w.dot(&x) + self.gamma,
        }
    }
}

/// `σ` for activation `a`, and whether the floor is active.
#[inline]
pub(crate) fn sigma_of_activation(a: f64, floor: f64) -> (f64, bool) {
    let s = logistic(a);
    if s < floor {
        (floor, true)
    } else {
        (s, false)
    }
}

/// `σ_t(x)` with the default floor.
pub fn sigma(p: &AnnotatorParams, x: ArrayView1<'_, f64>) -> f64 {
    sigma_floored(p, x, SIGMA_MIN)
}

pub fn sigma_floored(p: &AnnotatorParams, x: ArrayView1<'_, f64>, floor: f64) -> f64 {
    sigma_of_activation(p.activation(x), floor).0
}

/// `ln N(y; z, σ²)`.
#[inline]
pub fn label_loglik(y: u8, z: u8, sigma: f64) -> f64 {
    let r = f64::from(y) - f64::from(z);
    -sigma.ln() - HALF_LN_2PI - r * r / (2.0 * sigma * sigma)
}

/// Derivative of `label_loglik(y, z, σ)` with respect to the activation
/// `a = wᵀx + γ`: `[(y − z)²/σ² − 1](1 − σ)`, or zero on the floor.
#[inline]
pub(crate) fn activation_grad(y: u8, z: u8, sigma: f64, clamped: bool) -> f64 {
    if clamped {
        return 0.0;
    }
    let r = f64::from(y) - f64::from(z);
    (r * r / (sigma * sigma) - 1.0) * (1.0 - sigma)
}

/// Per-point contributions to `∂/∂w_t` and `∂/∂γ_t` of `ln p(y | x, z)`.
pub fn sigma_grad_terms(
    p: &AnnotatorParams,
    x: ArrayView1<'_, f64>,
    y: u8,
    z: u8,
) -> (Array1<f64>, f64) {
    let (s, clamped) = sigma_of_activation(p.activation(x), SIGMA_MIN);
    let g = activation_grad(y, z, s, clamped);
    (x.mapv(|v| g * v), g)
}
