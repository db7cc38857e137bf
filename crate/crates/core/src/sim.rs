//! Simulated annotators with region-dependent expertise.
//!
//! The data is partitioned by k-means into one cluster per labeler. Labeler
//! `t` copies the ground truth on cluster `t` and flips an exact,
//! uniformly chosen `round(error_rate · m_t)` of the `m_t` labels outside it.

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, LabelMatrix};
use crate::error::{Error, Result};
use crate::math::mix_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Number of labelers, which is also the k-means cluster count.
    pub num_labelers: usize,
    /// Fraction of off-cluster labels each labeler gets wrong.
    pub error_rate: f64,
    pub seed: u64,
    pub kmeans_restarts: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_labelers: 5,
            error_rate: 0.35,
            seed: 0,
            kmeans_restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster index in `0..k` per point.
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    /// Within-cluster sum of squared distances.
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distinct_rows(x: &Array2<f64>) -> usize {
    let mut rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let cmp = |a: &Vec<f64>, b: &Vec<f64>| {
        a.iter()
            .zip(b)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    rows.sort_by(cmp);
    rows.dedup_by(|a, b| cmp(a, b).is_eq());
    rows.len()
}

/// Lloyd's algorithm from distance-weighted seeding, best of `restarts`.
pub fn kmeans(x: &Array2<f64>, k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::invalid("k-means needs at least one cluster"));
    }
    if restarts == 0 {
        return Err(Error::invalid("k-means needs at least one restart"));
    }
    let distinct = distinct_rows(x);
    if k > distinct {
        return Err(Error::invalid(format!(
            "cannot form {k} clusters from {distinct} distinct points"
        )));
    }
    let x = x.as_standard_layout();
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, r as u64));
        let run = lloyd(&x.view().to_owned(), k, &mut rng);
        // Strictly lower inertia wins; ties keep the earlier restart.
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn seed_centroids(x: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut centroids = Array2::zeros((k, d));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&x.row(first));
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist(x.row(i).as_slice().unwrap(), x.row(first).as_slice().unwrap()))
        .collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // Round-off can run past the last positive weight.
            if nearest[chosen] == 0.0 {
                chosen = nearest.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for i in 0..n {
            let dist = sq_dist(x.row(i).as_slice().unwrap(), x.row(pick).as_slice().unwrap());
            if dist < nearest[i] {
                nearest[i] = dist;
            }
        }
    }
    centroids
}

fn assign(x: &Array2<f64>, centroids: &Array2<f64>, out: &mut [usize]) -> (bool, f64) {
    let mut changed = false;
    let mut inertia = 0.0;
    for (i, row) in x.rows().into_iter().enumerate() {
        let xi = row.as_slice().unwrap();
        let (mut best, mut best_d) = (0, f64::INFINITY);
        for (c, cen) in centroids.rows().into_iter().enumerate() {
            let dist = sq_dist(xi, cen.as_slice().unwrap());
            if dist < best_d {
                best = c;
                best_d = dist;
            }
        }
        if out[i] != best {
            out[i] = best;
            changed = true;
        }
        inertia += best_d;
    }
    (changed, inertia)
}

fn lloyd(x: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> KMeansResult {
    const MAX_ITER: usize = 300;
    let (n, d) = x.dim();
    let mut centroids = seed_centroids(x, k, rng);
    let mut assignments = vec![usize::MAX; n];
    let mut inertia = assign(x, &centroids, &mut assignments).1;
    for _ in 0..MAX_ITER {
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            sums.row_mut(c).scaled_add(1.0, &x.row(i));
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centroids.row_mut(c).assign(&mean);
            }
        }
        // Empty clusters take over the point farthest from its centroid.
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| {
                    let da = sq_dist(x.row(a).as_slice().unwrap(), centroids.row(assignments[a]).as_slice().unwrap());
                    let db = sq_dist(x.row(b).as_slice().unwrap(), centroids.row(assignments[b]).as_slice().unwrap());
                    da.total_cmp(&db).then(b.cmp(&a))
                });
            if let Some(i) = far {
                counts[assignments[i]] -= 1;
                counts[c] = 1;
                assignments[i] = c;
                centroids.row_mut(c).assign(&x.row(i));
            }
        }
        let (changed, new_inertia) = assign(x, &centroids, &mut assignments);
        inertia = new_inertia;
        if !changed {
            break;
        }
    }
    KMeansResult {
        assignments,
        centroids,
        inertia,
    }
}

/// Labels every point by every simulated labeler. Returns the labels and
/// the cluster assignment that defines each labeler's expertise region.
pub fn simulate_labelers(ds: &Dataset, cfg: &SimConfig) -> Result<(LabelMatrix, Vec<usize>)> {
    let truth = ds
        .ground_truth()
        .ok_or_else(|| Error::invalid("labeler simulation needs ground-truth labels"))?;
    if !(0.0..1.0).contains(&cfg.error_rate) {
        return Err(Error::invalid(format!("error rate {} outside [0, 1)", cfg.error_rate)));
    }
    let k = cfg.num_labelers;
    let clusters = kmeans(ds.features(), k, mix_seed(cfg.seed, 1), cfg.kmeans_restarts)?;
    let n = ds.num_points();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2));
    let mut labels = LabelMatrix::new(n, k);
    for t in 0..k {
        let off: Vec<usize> = (0..n).filter(|&i| clusters.assignments[i] != t).collect();
        let flips = (cfg.error_rate * off.len() as f64).round() as usize;
        let mut flipped = vec![false; n];
        for j in index::sample(&mut rng, off.len(), flips) {
            flipped[off[j]] = true;
        }
        for i in 0..n {
            let y = if flipped[i] { 1 - truth[i] } else { truth[i] };
            labels.insert(i, t, y)?;
        }
    }
    Ok((labels, clusters.assignments))
}

/// Per-labeler disagreement with the ground truth outside its own cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelerSummary {
    pub labeler: usize,
    pub off_cluster: usize,
    pub flips: usize,
    pub in_cluster_errors: usize,
}

impl LabelerSummary {
    pub fn off_cluster_error(&self) -> f64 {
        if self.off_cluster == 0 {
            0.0
        } else {
            self.flips as f64 / self.off_cluster as f64
        }
    }
}

pub fn summarize(labels: &LabelMatrix, truth: &[u8], assignments: &[usize]) -> Vec<LabelerSummary> {
    (0..labels.num_annotators())
        .map(|t| {
            let mut s = LabelerSummary {
                labeler: t,
                off_cluster: 0,
                flips: 0,
                in_cluster_errors: 0,
            };
            for (i, &c) in assignments.iter().enumerate() {
                let wrong = labels.get(i, t).is_some_and(|y| y != truth[i]);
                if c == t {
                    s.in_cluster_errors += usize::from(wrong);
                } else {
                    s.off_cluster += 1;
                    s.flips += usize::from(wrong);
                }
            }
            s
        })
        .collect()
}

pub fn write_assignments_csv(assignments: &[usize], path: impl AsRef<std::path::Path>) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let mut out = String::from("point,cluster\n");
    for (i, c) in assignments.iter().enumerate() {
        out.push_str(&format!("{i},{c}\n"));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
