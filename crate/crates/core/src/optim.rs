//! Limited-memory BFGS ascent with a strong-Wolfe line search.
//!
//! The optimizer maximizes; internally it minimizes the negated objective.
//! Objectives are closures `f(x, grad) -> value` that write the gradient
//! into `grad`.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::math::dot;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    /// Number of stored correction pairs.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once the Euclidean norm of the gradient falls to this value.
    pub gradient_tolerance: f64,
    /// Armijo constant `c1`.
    pub sufficient_decrease: f64,
    /// Curvature constant `c2`.
    pub curvature: f64,
    pub max_line_search: usize,
    /// Relative objective change below which progress counts as stalled.
    pub value_tolerance: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 100,
            gradient_tolerance: 1e-6,
            sufficient_decrease: 1e-4,
            curvature: 0.9,
            max_line_search: 40,
            value_tolerance: 1e-15,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let c1 = self.sufficient_decrease;
        let c2 = self.curvature;
        if !(0.0 < c1 && c1 < c2 && c2 < 1.0) {
            return Err(Error::invalid(format!(
                "line search needs 0 < c1 < c2 < 1, got c1={c1}, c2={c2}"
            )));
        }
        if self.memory == 0 || self.max_iterations == 0 || self.max_line_search == 0 {
            return Err(Error::invalid("memory and iteration limits must be positive"));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::invalid("gradient tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimStatus {
    /// Gradient norm at or below tolerance.
    Converged,
    /// Objective stopped changing within floating-point resolution.
    Stalled,
    MaxIterations,
    /// No step with sufficient increase was found; the best iterate is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: OptimStatus,
}

impl OptimResult {
    pub fn gradient_norm(&self) -> f64 {
        norm(&self.gradient)
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Negated objective evaluated along a ray.
struct Probe<'a, F> {
    f: &'a mut F,
    origin: &'a [f64],
    dir: &'a [f64],
    evaluations: usize,
}

#[derive(Clone)]
struct Point {
    step: f64,
    x: Vec<f64>,
    /// Negated objective.
    phi: f64,
    /// Negated gradient.
    grad: Vec<f64>,
    /// Directional derivative of `phi`.
    slope: f64,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Probe<'_, F> {
    fn eval(&mut self, step: f64) -> Point {
        let x: Vec<f64> = self
            .origin
            .iter()
            .zip(self.dir)
            .map(|(o, d)| o + step * d)
            .collect();
        let mut grad = vec![0.0; x.len()];
        let value = (self.f)(&x, &mut grad);
        self.evaluations += 1;
        grad.iter_mut().for_each(|g| *g = -*g);
        let mut phi = -value;
        let mut slope = dot(&grad, self.dir);
        if !phi.is_finite() || !slope.is_finite() {
            phi = f64::INFINITY;
            slope = f64::NAN;
        }
        Point {
            step,
            x,
            phi,
            grad,
            slope,
        }
    }
}

/// Minimizer of the cubic matching values and slopes at `a` and `b`,
/// or the midpoint when the cubic has no real minimizer.
fn cubic_min(a: &Point, b: &Point) -> f64 {
    let (x1, f1, g1) = (a.step, a.phi, a.slope);
    let (x2, f2, g2) = (b.step, b.phi, b.slope);
    if !(f1.is_finite() && f2.is_finite() && g1.is_finite() && g2.is_finite()) {
        return 0.5 * (x1 + x2);
    }
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let disc = d1 * d1 - g1 * g2;
    if disc < 0.0 {
        return 0.5 * (x1 + x2);
    }
    let d2 = (x2 - x1).signum() * disc.sqrt();
    let t = x2 - (x2 - x1) * (g2 + d2 - d1) / (g2 - g1 + 2.0 * d2);
    if t.is_finite() {
        t
    } else {
        0.5 * (x1 + x2)
    }
}

enum Search {
    Wolfe(Point),
    /// Sufficient decrease only.
    Armijo(Point),
    Failed,
}

fn line_search<F: FnMut(&[f64], &mut [f64]) -> f64>(
    probe: &mut Probe<'_, F>,
    start: &Point,
    initial_step: f64,
    cfg: &OptimConfig,
) -> Search {
    let (c1, c2) = (cfg.sufficient_decrease, cfg.curvature);
    let armijo = |p: &Point| p.phi <= start.phi + c1 * p.step * start.slope && p.phi < start.phi;
    let curvature_ok = |p: &Point| p.slope.abs() <= -c2 * start.slope;

    let mut prev = start.clone();
    let mut step = initial_step;
    let mut evals = 0;
    let (mut lo, mut hi);
    loop {
        let cur = probe.eval(step);
        evals += 1;
        if !armijo(&cur) || (evals > 1 && cur.phi >= prev.phi) {
            lo = prev;
            hi = cur;
            break;
        }
        if curvature_ok(&cur) {
            return Search::Wolfe(cur);
        }
        if cur.slope >= 0.0 {
            lo = cur;
            hi = prev;
            break;
        }
        if evals >= cfg.max_line_search {
            return Search::Armijo(cur);
        }
        // Extrapolate, keeping the trial within [1.1, 4] times the step.
        let next = cubic_min(&prev, &cur);
        step = next.clamp(cur.step * 1.1, cur.step * 4.0);
        prev = cur;
    }

    // Zoom: `lo` satisfies sufficient decrease (or is the start) and
    // the interval between `lo` and `hi` contains a Wolfe point.
    while evals < cfg.max_line_search {
        let (a, b) = (lo.step.min(hi.step), lo.step.max(hi.step));
        let width = b - a;
        if width <= f64::EPSILON * b.max(1e-300) {
            break;
        }
        let trial = cubic_min(&lo, &hi).clamp(a + 0.1 * width, b - 0.1 * width);
        let cur = probe.eval(trial);
        evals += 1;
        if !armijo(&cur) || cur.phi >= lo.phi {
            hi = cur;
        } else {
            if curvature_ok(&cur) {
                return Search::Wolfe(cur);
            }
            if cur.slope * (hi.step - lo.step) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    if lo.step > 0.0 {
        Search::Armijo(lo)
    } else {
        Search::Failed
    }
}

/// `H·v` for the inverse-Hessian approximation defined by `pairs`
/// (oldest first) with initial scaling `h0 · I`.
pub(crate) fn two_loop(pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, v: &[f64], h0: f64) -> Vec<f64> {
    let mut q = v.to_vec();
    let mut alphas = vec![0.0; pairs.len()];
    for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alphas[k] = a;
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
    }
    q.iter_mut().for_each(|qi| *qi *= h0);
    for (k, (s, y, rho)) in pairs.iter().enumerate() {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (alphas[k] - b) * si);
    }
    q
}

/// Maximizes `f` from `start`.
///
/// The returned value is never below the value at `start`. A start with
/// non-finite value or gradient is an error.
pub fn maximize<F>(mut f: F, start: Vec<f64>, cfg: &OptimConfig) -> Result<OptimResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    cfg.validate()?;
    let n = start.len();
    let mut grad = vec![0.0; n];
    let value = f(&start, &mut grad);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "objective is not finite at the starting point (value {value})"
        )));
    }
    grad.iter_mut().for_each(|g| *g = -*g);
    let mut cur = Point {
        step: 0.0,
        x: start,
        phi: -value,
        grad,
        slope: 0.0,
    };
    let mut evaluations = 1;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut h0 = 1.0;
    let mut status = OptimStatus::MaxIterations;
    let mut iterations = 0;

    let finish = |p: Point, iterations, evaluations, status| OptimResult {
        value: -p.phi,
        gradient: p.grad.iter().map(|g| -g).collect(),
        x: p.x,
        iterations,
        evaluations,
        status,
    };

    if n == 0 || norm(&cur.grad) <= cfg.gradient_tolerance {
        return Ok(finish(cur, 0, evaluations, OptimStatus::Converged));
    }

    while iterations < cfg.max_iterations {
        let mut dir: Vec<f64> = two_loop(&pairs, &cur.grad, h0).iter().map(|d| -d).collect();
        let mut slope = dot(&cur.grad, &dir);
        if !(slope < 0.0) || !slope.is_finite() {
            pairs.clear();
            h0 = 1.0;
            dir = cur.grad.iter().map(|g| -g).collect();
            slope = dot(&cur.grad, &dir);
        }
        let initial_step = if pairs.is_empty() {
            (1.0 / norm(&cur.grad)).min(1.0)
        } else {
            1.0
        };
        let mut start = cur.clone();
        start.step = 0.0;
        start.slope = slope;
        let mut probe = Probe {
            f: &mut f,
            origin: &cur.x,
            dir: &dir,
            evaluations: 0,
        };
        let outcome = line_search(&mut probe, &start, initial_step, cfg);
        evaluations += probe.evaluations;
        let next = match outcome {
            Search::Wolfe(p) | Search::Armijo(p) => p,
            Search::Failed => {
                status = OptimStatus::LineSearchFailed;
                break;
            }
        };
        iterations += 1;

        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if sy > 1e-12 * norm(&s) * yy.sqrt() && sy > 0.0 {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            h0 = sy / yy;
            pairs.push_back((s, y, 1.0 / sy));
        }

        let decrease = cur.phi - next.phi;
        cur = next;
        if norm(&cur.grad) <= cfg.gradient_tolerance {
            status = OptimStatus::Converged;
            break;
        }
        if decrease <= cfg.value_tolerance * cur.phi.abs().max(1.0) {
            status = OptimStatus::Stalled;
            break;
        }
    }
    Ok(finish(cur, iterations, evaluations, status))
}

/// Central-difference gradient `(f(x + h e_k) − f(x − h e_k)) / 2h`.
pub fn finite_diff_gradient<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + step;
            let up = f(&probe);
            probe[k] = x[k] - step;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn neg_sq_dist(c: Vec<f64>) -> impl FnMut(&[f64], &mut [f64]) -> f64 {
        move |x, g| {
            let mut v = 0.0;
            for k in 0..x.len() {
                let d = x[k] - c[k];
                v -= d * d;
                g[k] = -2.0 * d;
            }
            v
        }
    }

    #[test]
    fn concave_quadratic() {
        let c = vec![1.5, -2.0, 0.25, 7.0];
        let r = maximize(neg_sq_dist(c.clone()), vec![10.0, 10.0, -3.0, 0.0], &OptimConfig::default()).unwrap();
        for (a, b) in r.x.iter().zip(&c) {
            assert!((a - b).abs() < 1e-8, "{:?}", r.x);
        }
        assert_eq!(r.status, OptimStatus::Converged);
    }

    fn neg_rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -(-2.0 * (1.0 - a) - 400.0 * a * (b - a * a));
        g[1] = -(200.0 * (b - a * a));
        -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2))
    }

    #[test]
    fn rosenbrock() {
        let cfg = OptimConfig {
            max_iterations: 500,
            gradient_tolerance: 1e-10,
            ..Default::default()
        };
        let r = maximize(neg_rosenbrock, vec![-1.2, 1.0], &cfg).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?} {:?}", r.x, r.status);
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let mut calls = 0;
        let r = maximize(
            |x, g| {
                calls += 1;
                g.iter_mut().for_each(|v| *v = 0.0);
                x.iter().sum::<f64>() * 0.0 + 3.0
            },
            vec![4.0, 5.0],
            &OptimConfig::default(),
        )
        .unwrap();
        assert_eq!(r.x, vec![4.0, 5.0]);
        assert_eq!(r.iterations, 0);
        assert_eq!(calls, 1);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let r = maximize(|_, _| f64::NAN, vec![0.0], &OptimConfig::default());
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn every_accepted_step_increases_and_is_deterministic() {
        let mut trace = Vec::new();
        let mut f = |x: &[f64], g: &mut [f64]| {
            let v = neg_rosenbrock(x, g);
            trace.push(v);
            v
        };
        let cfg = OptimConfig { max_iterations: 60, ..Default::default() };
        let a = maximize(&mut f, vec![-1.2, 1.0], &cfg).unwrap();
        let b = maximize(neg_rosenbrock, vec![-1.2, 1.0], &cfg).unwrap();
        assert_eq!(a.x, b.x);
        assert!(a.value >= trace[0]);

        // Accepted iterates are monotone: rerun tracking only accepted points.
        let mut values = Vec::new();
        for it in 1..=30 {
            let c = OptimConfig { max_iterations: it, ..Default::default() };
            values.push(maximize(neg_rosenbrock, vec![-1.2, 1.0], &c).unwrap().value);
        }
        for w in values.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn invalid_line_search_constants_rejected() {
        let cfg = OptimConfig { sufficient_decrease: 0.95, ..Default::default() };
        assert!(maximize(neg_sq_dist(vec![0.0]), vec![1.0], &cfg).is_err());
    }

    #[test]
    fn two_loop_recovers_newton_direction_on_quadratic() {
        // Q-conjugate steps on a 4-d quadratic: after 4 pairs the two-loop
        // product equals Q⁻¹ v.
        let q = [
            [4.0, 1.0, 0.0, 0.5],
            [1.0, 3.0, 0.2, 0.0],
            [0.0, 0.2, 2.0, 0.3],
            [0.5, 0.0, 0.3, 1.5],
        ];
        let mul = |v: &[f64]| -> Vec<f64> { (0..4).map(|i| (0..4).map(|j| q[i][j] * v[j]).sum()).collect() };
        // Gram-Schmidt in the Q inner product.
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for e in [[1.0, 0.3, -0.2, 0.1], [0.0, 1.0, 0.5, -0.4], [0.2, 0.0, 1.0, 0.7], [-0.3, 0.1, 0.0, 1.0]] {
            let mut v = e.to_vec();
            for b in &basis {
                let c = dot(&v, &mul(b)) / dot(b, &mul(b));
                v.iter_mut().zip(b).for_each(|(vi, bi)| *vi -= c * bi);
            }
            basis.push(v);
        }
        let pairs: VecDeque<_> = basis
            .iter()
            .map(|s| {
                let y = mul(s);
                let rho = 1.0 / dot(s, &y);
                (s.clone(), y, rho)
            })
            .collect();
        let (s, y, _) = pairs.back().unwrap();
        let h0 = dot(s, y) / dot(y, y);
        let g = [0.3, -1.0, 2.0, 0.7];
        let d = two_loop(&pairs, &g, h0);
        let back = mul(&d);
        for (a, b) in back.iter().zip(&g) {
            assert!((a - b).abs() < 1e-12, "{back:?}");
        }
    }

    #[test]
    fn finite_differences() {
        let a = [0.5, -2.0, 3.0];
        let g = finite_diff_gradient(|x| dot(&a, x), &[1.0, 1.0, 1.0], 1e-3);
        for (gi, ai) in g.iter().zip(&a) {
            assert!((gi - ai).abs() < 1e-12);
        }
        let g = finite_diff_gradient(|x| dot(x, x), &[1.0, 2.0], 1e-4);
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
    }
}
