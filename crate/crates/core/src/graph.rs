//! Similarity graph over training points and the quadratic prior it induces
//! on linear classifier weights.
//!
//! With Gaussian weights `φ_ij = exp(−‖x_i − x_j‖² / h²)` and Laplacian
//! `Δ = diag(Φ1) − Φ`, the matrix `A = XᵀΔX` satisfies
//! `ξᵀAξ = Σ_{i<j} φ_ij (ξᵀx_i − ξᵀx_j)²`: weight vectors whose scores vary
//! smoothly over the graph are cheap.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConfig {
    /// Kernel bandwidth `h`; `None` selects the median pairwise distance.
    pub bandwidth: Option<f64>,
    /// Keep only each point's `knn` strongest neighbors (symmetrized by max).
    pub knn: Option<usize>,
    /// Prior strength `η` in `exp(−η ξᵀAξ)`.
    pub eta: f64,
    /// Scale of the Laplacian prior placed directly on labels. Recorded for
    /// reference only; the logistic-prior model does not use it.
    pub lambda: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            bandwidth: None,
            knn: None,
            eta: 1.0,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphPrior {
    pub weights: Array2<f64>,
    pub laplacian: Array2<f64>,
    pub prior_matrix: Array2<f64>,
    pub bandwidth: f64,
    pub lambda: f64,
    pub eta: f64,
}

impl GraphPrior {
    /// Builds the graph over every row of `x`, labeled or not.
    pub fn build(x: &Array2<f64>, cfg: &GraphConfig) -> Result<Self> {
        if !(cfg.eta >= 0.0 && cfg.eta.is_finite()) {
            return Err(Error::invalid(format!("eta must be finite and non-negative, got {}", cfg.eta)));
        }
        if !(cfg.lambda > 0.0) {
            return Err(Error::invalid(format!("lambda must be positive, got {}", cfg.lambda)));
        }
        let bandwidth = match cfg.bandwidth {
            Some(h) => h,
            None => median_bandwidth(x)?,
        };
        let weights = gaussian_weights(x, bandwidth, cfg.knn)?;
        let laplacian = laplacian(&weights)?;
        let prior_matrix = prior_matrix(x, &laplacian)?;
        Ok(Self {
            weights,
            laplacian,
            prior_matrix,
            bandwidth,
            lambda: cfg.lambda,
            eta: cfg.eta,
        })
    }

    pub fn dim(&self) -> usize {
        self.prior_matrix.nrows()
    }

    /// `ξᵀAξ`.
    pub fn quadratic(&self, xi: &[f64]) -> f64 {
        quad_form(&self.prior_matrix, xi)
    }

    /// Writes `Φ` and `A` as plain CSV matrices.
    pub fn dump_csv(&self, weights_path: impl AsRef<Path>, prior_path: impl AsRef<Path>) -> Result<()> {
        write_matrix_csv(&self.weights, weights_path)?;
        write_matrix_csv(&self.prior_matrix, prior_path)
    }
}

pub(crate) fn quad_form(a: &Array2<f64>, v: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, row) in a.rows().into_iter().enumerate() {
        let ri: f64 = row.iter().zip(v).map(|(aij, vj)| aij * vj).sum();
        total += v[i] * ri;
    }
    total
}

fn sq_dists(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        let xi = x.row(i);
        for j in (i + 1)..n {
            let v: f64 = xi.iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Dense Gaussian similarity weights with zero diagonal.
pub fn gaussian_weights(x: &Array2<f64>, h: f64, knn: Option<usize>) -> Result<Array2<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
    }
    let n = x.nrows();
    if let Some(k) = knn {
        if k == 0 || k >= n {
            return Err(Error::invalid(format!("knn must be in 1..{n}, got {k}")));
        }
    }
    let d2 = sq_dists(x);
    let h2 = h * h;
    let mut phi = d2.mapv(|v| (-v / h2).exp());
    phi.diag_mut().fill(0.0);

    if let Some(k) = knn {
        let mut keep = Array2::<bool>::from_elem((n, n), false);
        for i in 0..n {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            // Nearest first; index breaks ties.
            order.sort_by(|&a, &b| d2[(i, a)].total_cmp(&d2[(i, b)]).then(a.cmp(&b)));
            for &j in order.iter().take(k) {
                keep[(i, j)] = true;
            }
        }
        let mut sparse = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let a = if keep[(i, j)] { phi[(i, j)] } else { 0.0 };
                let b = if keep[(j, i)] { phi[(j, i)] } else { 0.0 };
                sparse[(i, j)] = a.max(b);
            }
        }
        phi = sparse;
    }
    Ok(phi)
}

/// Median Euclidean distance over pairs of rows that are not identical.
pub fn median_bandwidth(x: &Array2<f64>) -> Result<f64> {
    let n = x.nrows();
    let d2 = sq_dists(x);
    let mut dists: Vec<f64> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| d2[(i, j)])
        .filter(|&v| v > 0.0)
        .map(f64::sqrt)
        .collect();
    if dists.is_empty() {
        return Err(Error::invalid(
            "median bandwidth needs at least two distinct points",
        ));
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    Ok(if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    })
}

/// `Δ = D − Φ` with `D` the diagonal of row sums.
pub fn laplacian(phi: &Array2<f64>) -> Result<Array2<f64>> {
    let n = phi.nrows();
    if phi.ncols() != n {
        return Err(Error::dim(format!("weights must be square, got {:?}", phi.dim())));
    }
    for i in 0..n {
        for j in 0..n {
            let v = phi[(i, j)];
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("weight ({i}, {j}) = {v} is not a non-negative number")));
            }
            if v != phi[(j, i)] {
                return Err(Error::invalid(format!("weights are not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut delta = -phi.clone();
    for i in 0..n {
        // Off-diagonal sum, so Δ is exact even if Φ carries a diagonal.
        let d: f64 = phi.row(i).iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum();
        delta[(i, i)] = d;
    }
    Ok(delta)
}

/// `A = XᵀΔX`, symmetrized.
pub fn prior_matrix(x: &Array2<f64>, delta: &Array2<f64>) -> Result<Array2<f64>> {
    let n = x.nrows();
    if delta.dim() != (n, n) {
        return Err(Error::dim(format!(
            "Laplacian is {:?} but data has {n} rows",
            delta.dim()
        )));
    }
    let a = x.t().dot(&delta.dot(x));
    Ok((&a + &a.t()) * 0.5)
}

pub fn write_matrix_csv(m: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for row in m.axis_iter(Axis(0)) {
        let line = row.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(",");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
