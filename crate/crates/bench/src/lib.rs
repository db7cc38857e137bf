//! Seeded synthetic workloads shared by the benchmarks.

use lgp_core::annotators::AnnotatorParams;
use lgp_core::data::{Dataset, LabelMatrix};
use lgp_core::models::{LogisticParams, Posterior};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Workload {
    pub x: Array2<f64>,
    pub truth: Vec<u8>,
    pub labels: LabelMatrix,
    pub classifier: LogisticParams,
    pub annotators: Vec<AnnotatorParams>,
    pub posterior: Posterior,
}

/// `n` points in `d` dimensions labeled by `t` annotators with 20% noise,
/// each annotator seeing about 80% of the points.
pub fn workload(n: usize, d: usize, t: usize, seed: u64) -> Workload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
    let truth: Vec<u8> = (0..n)
        .map(|i| u8::from(x.row(i).iter().enumerate().map(|(k, v)| if k % 2 == 0 { *v } else { -v }).sum::<f64>() > 0.0))
        .collect();
    let mut labels = LabelMatrix::new(n, t);
    for (i, &z) in truth.iter().enumerate() {
        for a in 0..t {
            if rng.random_bool(0.8) {
                labels.insert(i, a, z ^ u8::from(rng.random_bool(0.2))).unwrap();
            }
        }
    }
    let classifier = LogisticParams {
        coef: (0..d).map(|_| rng.random_range(-0.5..0.5)).collect(),
        intercept: 0.1,
    };
    let annotators = (0..t)
        .map(|_| AnnotatorParams {
            w: (0..d).map(|_| rng.random_range(-0.3..0.3)).collect::<Array1<f64>>(),
            gamma: -1.0,
        })
        .collect();
    let posterior = Posterior {
        p1: (0..n).map(|_| rng.random_range(0.05..0.95)).collect(),
    };
    Workload {
        x,
        truth,
        labels,
        classifier,
        annotators,
        posterior,
    }
}

impl Workload {
    pub fn dataset(&self) -> Dataset {
        Dataset::new(self.x.clone(), Some(self.truth.clone())).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn workload_is_seeded() {
        let a = workload(20, 3, 2, 5);
        let b = workload(20, 3, 2, 5);
        assert_eq!(a.x, b.x);
        assert_eq!(a.labels, b.labels);
        assert!(a.labels.num_labels() > 0);
    }
}
