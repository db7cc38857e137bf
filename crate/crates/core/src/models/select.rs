//! Choosing the graph-prior strength by cross-validation on annotator labels.
//!
//! Labeled points are split into stratified folds (strata: majority vote).
//! For every candidate `η`, LGP is refit with one fold's labels removed and
//! held-out points are scored by the cross-entropy between the fitted
//! classifier and their share of positive votes. Unlabeled points stay in
//! every fit, and the graph is never rebuilt.

use super::{fit, FitConfig, ModelKind};
use crate::data::{stratified_kfold_by, LabelMatrix};
use crate::error::{Error, Result};
use crate::graph::GraphPrior;
use ndarray::Array2;

#[derive(Debug, Clone, PartialEq)]
pub struct EtaSelection {
    pub eta: f64,
    pub grid: Vec<f64>,
    /// Held-out `Σ q ln p + (1−q) ln(1−p)` over folds, `q` the share of
    /// positive votes; `-inf` if a fit failed.
    pub scores: Vec<f64>,
    /// Whether every fit's EM objective was non-decreasing.
    pub all_monotone: bool,
}

/// `10^0, 10^-1, ..., 10^-6`.
pub fn default_eta_grid() -> Vec<f64> {
    (0..=6).map(|k| 10f64.powi(-k)).collect()
}

/// Returns the grid value with the highest held-out score; ties keep the
/// earlier value.
pub fn select_eta(
    x: &Array2<f64>,
    labels: &LabelMatrix,
    prior: &GraphPrior,
    grid: &[f64],
    folds: usize,
    seed: u64,
    config: &FitConfig,
) -> Result<EtaSelection> {
    if grid.is_empty() {
        return Err(Error::invalid("eta grid is empty"));
    }
    if let Some(e) = grid.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(Error::invalid(format!("eta must be finite and non-negative, got {e}")));
    }
    let labeled: Vec<usize> = labels.labeled_points().collect();
    let strata: Vec<u8> = labeled.iter().map(|&i| u8::from(vote_share(labels, i) >= 0.5)).collect();
    if labeled.len() < folds {
        return Err(Error::invalid(format!(
            "{} labeled points cannot fill {folds} folds",
            labeled.len()
        )));
    }
    let splits = stratified_kfold_by(&strata, folds, seed)?;

    let mut scores = vec![0.0; grid.len()];
    let mut all_monotone = true;
    for (_, held) in &splits {
        let mut train = labels.clone();
        for &k in held {
            train.clear_point(labeled[k]);
        }
        for (score, &eta) in scores.iter_mut().zip(grid) {
            if *score == f64::NEG_INFINITY {
                continue;
            }
            let g = GraphPrior { eta, ..prior.clone() };
            let held_out = fit(ModelKind::Lgp, x, &train, Some(&g), config).map(|m| {
                all_monotone &= m.diagnostics.monotone;
                held
                    .iter()
                    .map(|&k| {
                        let (q, a) = (vote_share(labels, labeled[k]), m.classifier.activation(x.row(labeled[k])));
                        f64::from(u8::from((q >= 0.5) == (a >= 0.0)))
                    })
                    .sum::<f64>()
            });
            match held_out {
                Ok(v) if v.is_finite() => *score += v,
                _ => *score = f64::NEG_INFINITY,
            }
        }
    }
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |b, (k, &s)| if s > scores[b] { k } else { b });
    if scores[best] == f64::NEG_INFINITY {
        return Err(Error::Numerical("every eta candidate failed to fit".into()));
    }
    Ok(EtaSelection {
        eta: grid[best],
        grid: grid.to_vec(),
        scores,
        all_monotone,
    })
}

fn vote_share(labels: &LabelMatrix, i: usize) -> f64 {
    let l = labels.labels_of(i);
    l.iter().filter(|&&(_, y)| y == 1).count() as f64 / l.len() as f64
}
