use super::*;
use crate::graph::{GraphConfig, GraphPrior};
use crate::optim::finite_diff_gradient;
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gaussian density written out independently of the library.
fn density(y: u8, z: u8, s: f64) -> f64 {
    let r = f64::from(y) - f64::from(z);
    (-r * r / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
}

fn sig(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

struct Instance {
    x: Array2<f64>,
    labels: LabelMatrix,
    classifier: LogisticParams,
    annotators: Vec<AnnotatorParams>,
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize, d: usize, t: usize, missing: f64) -> Instance {
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.5..1.5));
    let mut labels = LabelMatrix::new(n, t);
    for i in 0..n {
        for a in 0..t {
            if rng.random::<f64>() >= missing {
                labels.insert(i, a, rng.random_range(0..2u8)).unwrap();
            }
        }
    }
    let classifier = LogisticParams {
        coef: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        intercept: rng.random_range(-0.5..0.5),
    };
    // Keep σ away from the floor so finite differences see a smooth function.
    let annotators = (0..t)
        .map(|_| AnnotatorParams {
            w: (0..d).map(|_| rng.random_range(-0.3..0.3)).collect(),
            gamma: rng.random_range(-0.5..0.8),
        })
        .collect();
    Instance {
        x,
        labels,
        classifier,
        annotators,
    }
}

/// One-point posterior by direct enumeration over z.
fn brute_posterior(inst: &Instance, i: usize) -> f64 {
    let xi = inst.x.row(i);
    let prior1 = sig(inst.classifier.coef.dot(&xi) + inst.classifier.intercept);
    let mut joint = [1.0 - prior1, prior1];
    for &(t, y) in inst.labels.labels_of(i) {
        let p = &inst.annotators[t];
        let s = sig(p.w.dot(&xi) + p.gamma);
        for z in 0..2u8 {
            joint[z as usize] *= density(y, z, s);
        }
    }
    joint[1] / (joint[0] + joint[1])
}

#[test]
fn e_step_unlabeled_is_prior() {
    let x = array![[0.4, -2.0]];
    let labels = LabelMatrix::new(1, 2);
    let post = e_step_id(&LogisticParams::zeros(2), &[AnnotatorParams::zeros(2), AnnotatorParams::zeros(2)], &x, &labels)
        .unwrap();
    assert_eq!(post.p1, vec![0.5]);

    let c = LogisticParams {
        coef: array![0.3, 0.1],
        intercept: -0.2,
    };
    let post = e_step_id(&c, &[AnnotatorParams::zeros(2), AnnotatorParams::zeros(2)], &x, &labels).unwrap();
    assert_eq!(post.p1[0], c.prob(x.row(0)));
}

#[test]
fn e_step_two_agreeing_annotators() {
    let x = array![[1.0]];
    let labels = LabelMatrix::from_dense(&[vec![1, 1]]).unwrap();
    let ann = vec![AnnotatorParams::zeros(1); 2];
    let post = e_step_id(&LogisticParams::zeros(1), &ann, &x, &labels).unwrap();
    let oracle = density(1, 1, 0.5).powi(2) / (density(1, 1, 0.5).powi(2) + density(1, 0, 0.5).powi(2));
    assert!((post.p1[0] - oracle).abs() < 1e-14);
    assert!((post.p1[0] - 0.9820).abs() < 1e-4);
}

#[test]
fn e_step_disagreement_cancels() {
    let x = array![[0.7]];
    let labels = LabelMatrix::from_dense(&[vec![0, 1]]).unwrap();
    let ann = vec![AnnotatorParams { w: array![0.2], gamma: 0.1 }; 2];
    let c = LogisticParams {
        coef: array![0.9],
        intercept: -0.3,
    };
    let post = e_step_id(&c, &ann, &x, &labels).unwrap();
    assert!((post.p1[0] - c.prob(x.row(0))).abs() < 1e-15);
}

#[test]
fn e_step_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let inst = random_instance(&mut rng, 8, 3, 3, 0.3);
        let id = e_step_id(&inst.classifier, &inst.annotators, &inst.x, &inst.labels).unwrap();
        let lgp = e_step_lgp(&inst.classifier, &inst.annotators, &inst.x, &inst.labels).unwrap();
        assert_eq!(id, lgp);
        for i in 0..8 {
            assert!((id.p1[i] - brute_posterior(&inst, i)).abs() < 1e-12);
        }
    }
}

fn pack_all(g: &ObjectiveGradient) -> Vec<f64> {
    let mut v: Vec<f64> = g.coef.to_vec();
    v.push(g.intercept);
    for (w, gm) in g.w.iter().zip(&g.gamma) {
        v.extend(w.iter());
        v.push(*gm);
    }
    v
}

fn layout_of(inst: &Instance) -> Layout {
    Layout {
        d: inst.x.ncols(),
        t: inst.annotators.len(),
        free_w: true,
    }
}

fn assert_close_rel(analytic: &[f64], numeric: &[f64], tol: f64) {
    for (k, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let scale = a.abs().max(n.abs()).max(1.0);
        assert!((a - n).abs() / scale < tol, "component {k}: analytic {a} vs numeric {n}");
    }
}

#[test]
fn expected_objective_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let inst = random_instance(&mut rng, 30, 5, 3, 0.2);
        let post = Posterior {
            p1: (0..30).map(|_| rng.random::<f64>()).collect(),
        };
        let layout = layout_of(&inst);
        let g = m_step_objective_id(&inst.classifier, &inst.annotators, &inst.x, &inst.labels, &post).unwrap();
        let start = layout.pack(&inst.classifier, &inst.annotators);
        let fd = finite_diff_gradient(
            |v| {
                let (c, a) = layout.unpack(v);
                m_step_objective_id(&c, &a, &inst.x, &inst.labels, &post).unwrap().value
            },
            &start,
            1e-5,
        );
        assert_close_rel(&pack_all(&g), &fd, 1e-5);

        let prior = GraphPrior::build(&inst.x, &GraphConfig { eta: 0.05, ..Default::default() }).unwrap();
        let g = m_step_objective_lgp(&inst.classifier, &inst.annotators, &inst.x, &inst.labels, &prior, &post).unwrap();
        let fd = finite_diff_gradient(
            |v| {
                let (c, a) = layout.unpack(v);
                m_step_objective_lgp(&c, &a, &inst.x, &inst.labels, &prior, &post).unwrap().value
            },
            &start,
            1e-5,
        );
        assert_close_rel(&pack_all(&g), &fd, 1e-5);
    }
}

#[test]
fn concentrated_posterior_gives_complete_data_loglik() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inst = random_instance(&mut rng, 10, 2, 2, 0.0);
    let z: Vec<u8> = (0..10).map(|_| rng.random_range(0..2u8)).collect();
    let post = Posterior {
        p1: z.iter().map(|&v| f64::from(v)).collect(),
    };
    let g = m_step_objective_id(&inst.classifier, &inst.annotators, &inst.x, &inst.labels, &post).unwrap();
    let mut complete = 0.0;
    for i in 0..10 {
        let xi = inst.x.row(i);
        let p1 = sig(inst.classifier.coef.dot(&xi) + inst.classifier.intercept);
        complete += if z[i] == 1 { p1.ln() } else { (1.0 - p1).ln() };
        for &(t, y) in inst.labels.labels_of(i) {
            let p = &inst.annotators[t];
            complete += density(y, z[i], sig(p.w.dot(&xi) + p.gamma)).ln();
        }
    }
    assert!((g.value - complete).abs() < 1e-10);
}

#[test]
fn neutral_posterior_at_neutral_classifier_has_zero_classifier_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inst = random_instance(&mut rng, 12, 3, 2, 0.0);
    let post = Posterior { p1: vec![0.5; 12] };
    let g = m_step_objective_id(&LogisticParams::zeros(3), &inst.annotators, &inst.x, &inst.labels, &post).unwrap();
    assert!(g.coef.iter().all(|v| v.abs() < 1e-15));
    assert_eq!(g.intercept, 0.0);
}

#[test]
fn lgp_objective_reduces_to_id() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let inst = random_instance(&mut rng, 15, 3, 2, 0.1);
    let post = Posterior { p1: vec![0.3; 15] };
    let mut prior = GraphPrior::build(&inst.x, &GraphConfig::default()).unwrap();
    prior.eta = 0.0;
    let id = m_step_objective_id(&inst.classifier, &inst.annotators, &inst.x, &inst.labels, &post).unwrap();
    let lgp = m_step_objective_lgp(&inst.classifier, &inst.annotators, &inst.x, &inst.labels, &prior, &post).unwrap();
    assert_eq!(id, lgp);

    prior.eta = 2.0;
    let zero = LogisticParams {
        coef: Array1::zeros(3),
        intercept: 0.4,
    };
    let id = m_step_objective_id(&zero, &inst.annotators, &inst.x, &inst.labels, &post).unwrap();
    let lgp = m_step_objective_lgp(&zero, &inst.annotators, &inst.x, &inst.labels, &prior, &post).unwrap();
    assert_eq!(id.value, lgp.value);
    assert_eq!(id.coef, lgp.coef);
}

#[test]
fn observed_loglik_of_unlabeled_point_is_zero() {
    let x = array![[1.0, 2.0]];
    let labels = LabelMatrix::new(1, 1);
    let v = observed_loglik(
        ModelKind::Id,
        &LogisticParams::zeros(2),
        &[AnnotatorParams::zeros(2)],
        &x,
        &labels,
        None,
    )
    .unwrap();
    assert_eq!(v, 0.0);
}

#[test]
fn observed_loglik_matches_per_point_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inst = random_instance(&mut rng, 9, 2, 3, 0.4);
    let v = observed_loglik(ModelKind::Id, &inst.classifier, &inst.annotators, &inst.x, &inst.labels, None).unwrap();
    let mut oracle = 0.0;
    for i in 0..9 {
        let xi = inst.x.row(i);
        let p1 = sig(inst.classifier.coef.dot(&xi) + inst.classifier.intercept);
        let mut j = [1.0 - p1, p1];
        for &(t, y) in inst.labels.labels_of(i) {
            let p = &inst.annotators[t];
            let s = sig(p.w.dot(&xi) + p.gamma);
            j[0] *= density(y, 0, s);
            j[1] *= density(y, 1, s);
        }
        oracle += (j[0] + j[1]).ln();
    }
    assert!((v - oracle).abs() < 1e-12);
}

#[test]
fn marginal_gradient_matches_em_gradient_and_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for kind in [ModelKind::Id, ModelKind::Lgp] {
        let inst = random_instance(&mut rng, 20, 3, 3, 0.3);
        let prior = GraphPrior::build(&inst.x, &GraphConfig { eta: 0.1, ..Default::default() }).unwrap();
        let marginal = observed_gradient(kind, &inst.classifier, &inst.annotators, &inst.x, &inst.labels, Some(&prior)).unwrap();
        let post = e_step_id(&inst.classifier, &inst.annotators, &inst.x, &inst.labels).unwrap();
        let em = match kind {
            ModelKind::Lgp => m_step_objective_lgp(&inst.classifier, &inst.annotators, &inst.x, &inst.labels, &prior, &post),
            _ => m_step_objective_id(&inst.classifier, &inst.annotators, &inst.x, &inst.labels, &post),
        }
        .unwrap();
        assert_close_rel(&pack_all(&marginal), &pack_all(&em), 1e-10);

        let layout = layout_of(&inst);
        let fd = finite_diff_gradient(
            |v| {
                let (c, a) = layout.unpack(v);
                observed_loglik(kind, &c, &a, &inst.x, &inst.labels, Some(&prior)).unwrap()
            },
            &layout.pack(&inst.classifier, &inst.annotators),
            1e-5,
        );
        assert_close_rel(&pack_all(&marginal), &fd, 1e-5);
    }
}

#[test]
fn lgp_requires_prior() {
    let x = array![[1.0], [2.0]];
    let labels = LabelMatrix::from_dense(&[vec![1], vec![0]]).unwrap();
    assert!(fit(ModelKind::Lgp, &x, &labels, None, &FitConfig::default()).is_err());
    assert!(observed_loglik(ModelKind::Lgp, &LogisticParams::zeros(1), &[AnnotatorParams::zeros(1)], &x, &labels, None).is_err());
}

fn separable(n: usize, seed: u64) -> (Array2<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
    let z = (0..n).map(|i| u8::from(x[(i, 0)] + 0.5 * x[(i, 1)] > 0.0)).collect();
    (x, z)
}

#[test]
fn fit_recovers_perfect_single_annotator() {
    let (x, z) = separable(40, 1);
    let labels = LabelMatrix::from_dense(&z.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
    for kind in [ModelKind::Id, ModelKind::MlOriginal] {
        let m = fit(kind, &x, &labels, None, &FitConfig::default()).unwrap();
        assert_eq!(m.posterior.hard_labels(), z, "{kind}");
        assert!(m.diagnostics.monotone);
    }
}

#[test]
fn fit_with_unanimous_annotators_concentrates() {
    let (x, z) = separable(30, 2);
    let labels = LabelMatrix::from_dense(&z.iter().map(|&v| vec![v; 3]).collect::<Vec<_>>()).unwrap();
    let prior = GraphPrior::build(&x, &GraphConfig::default()).unwrap();
    for kind in [ModelKind::Id, ModelKind::Lgp, ModelKind::MlOriginal] {
        let m = fit(kind, &x, &labels, Some(&prior), &FitConfig::default()).unwrap();
        for (p, &zi) in m.posterior.p1.iter().zip(&z) {
            let on_truth = if zi == 1 { *p } else { 1.0 - p };
            assert!(on_truth > 0.99, "{kind}: {p} for label {zi}");
        }
    }
}

#[test]
fn huge_epsilon_stops_after_one_cycle() {
    let (x, z) = separable(20, 3);
    let labels = LabelMatrix::from_dense(&z.iter().map(|&v| vec![v, 1 - v]).collect::<Vec<_>>()).unwrap();
    let cfg = FitConfig { epsilon: 1e6, ..Default::default() };
    let m = fit(ModelKind::Id, &x, &labels, None, &cfg).unwrap();
    assert_eq!(m.diagnostics.iterations, 1);
    assert!(m.diagnostics.converged);
}

#[test]
fn ml_original_keeps_noise_weights_at_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let inst = random_instance(&mut rng, 40, 3, 3, 0.2);
    let m = fit(ModelKind::MlOriginal, &inst.x, &inst.labels, None, &FitConfig::default()).unwrap();
    for a in &m.annotators {
        assert!(a.w.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn id_ignores_appended_unlabeled_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let inst = random_instance(&mut rng, 30, 3, 3, 0.1);
    let extra = Array2::from_shape_fn((10, 3), |_| rng.random_range(-3.0..3.0));
    let x_big = ndarray::concatenate![ndarray::Axis(0), inst.x, extra];
    let labels_big = inst.labels.with_unlabeled(10);
    let a = fit(ModelKind::Id, &inst.x, &inst.labels, None, &FitConfig::default()).unwrap();
    let b = fit(ModelKind::Id, &x_big, &labels_big, None, &FitConfig::default()).unwrap();
    assert_eq!(a.classifier, b.classifier);
    assert_eq!(a.annotators, b.annotators);
    assert_eq!(a.diagnostics.objective_history, b.diagnostics.objective_history);
}

#[test]
fn predict_without_labels_is_classifier_prior() {
    let (x, z) = separable(20, 4);
    let labels = LabelMatrix::from_dense(&z.iter().map(|&v| vec![v, v]).collect::<Vec<_>>()).unwrap();
    let m = fit(ModelKind::Id, &x, &labels, None, &FitConfig::default()).unwrap();
    let q = array![0.3, -0.8];
    let direct = sig(m.classifier.coef.dot(&q) + m.classifier.intercept);
    assert!((predict(&m, q.view(), None).unwrap() - direct).abs() < 1e-15);
    assert!(predict(&m, array![1.0].view(), None).is_err());

    let mut zero = m.clone();
    zero.kind = ModelKind::Lgp;
    zero.classifier = LogisticParams::zeros(2);
    assert_eq!(predict(&zero, q.view(), None).unwrap(), 0.5);
}

#[test]
fn predict_with_labels_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let inst = random_instance(&mut rng, 1, 3, 3, 0.0);
    let model = TrainedModel {
        kind: ModelKind::Id,
        classifier: inst.classifier.clone(),
        annotators: inst.annotators.clone(),
        posterior: Posterior { p1: vec![] },
        scaling: ScalingParams::identity(3),
        eta: 0.0,
        bandwidth: None,
        sigma_min: SIGMA_MIN,
        diagnostics: FitDiagnostics {
            iterations: 0,
            final_objective: 0.0,
            converged: true,
            objective_history: vec![],
            monotone: true,
        },
    };
    let p = predict(&model, inst.x.row(0), Some(inst.labels.labels_of(0))).unwrap();
    assert!((p - brute_posterior(&inst, 0)).abs() < 1e-12);
    assert!(predict(&model, inst.x.row(0), Some(&[(7, 1)])).is_err());
}

#[test]
fn model_text_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let inst = random_instance(&mut rng, 25, 3, 2, 0.3);
    let prior = GraphPrior::build(&inst.x, &GraphConfig::default()).unwrap();
    for kind in [ModelKind::Id, ModelKind::Lgp, ModelKind::MlOriginal] {
        let mut m = fit(kind, &inst.x, &inst.labels, Some(&prior), &FitConfig::default()).unwrap();
        m.scaling = ScalingParams {
            mean: array![0.1, 1.0 / 3.0, -7.25],
            std: array![1.0, 2.0f64.sqrt(), 1e-7],
        };
        let text = m.to_text();
        assert!(text.contains(&format!("kind = {kind}")));
        let back = TrainedModel::from_text(&text).unwrap();
        assert_eq!(back, m);
    }
}

#[test]
fn model_text_rejects_unknown_and_missing_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let inst = random_instance(&mut rng, 10, 2, 1, 0.0);
    let m = fit(ModelKind::Id, &inst.x, &inst.labels, None, &FitConfig::default()).unwrap();
    let text = m.to_text();
    assert!(TrainedModel::from_text(&format!("{text}extra = 1\n")).is_err());
    assert!(TrainedModel::from_text(&text.replace("eta =", "# eta =")).is_err());
    assert!(TrainedModel::from_text(&text.replace("version = 1", "version = 9")).is_err());
}

#[test]
fn kind_parsing() {
    assert_eq!("lgp".parse::<ModelKind>().unwrap(), ModelKind::Lgp);
    assert_eq!("ML-ORIGINAL".parse::<ModelKind>().unwrap(), ModelKind::MlOriginal);
    assert_eq!("ml_original".parse::<ModelKind>().unwrap(), ModelKind::MlOriginal);
    assert!("gp".parse::<ModelKind>().is_err());
}

#[test]
fn eta_selection_contracts() {
    let (x, z) = separable(40, 9);
    let mut labels = LabelMatrix::from_dense(&z.iter().map(|&v| vec![v, v]).collect::<Vec<_>>()).unwrap();
    for i in 30..40 {
        labels.clear_point(i);
    }
    let prior = GraphPrior::build(&x, &GraphConfig::default()).unwrap();
    let cfg = FitConfig::default();
    let grid = [1.0, 1e-2, 1e-4];
    let a = select_eta(&x, &labels, &prior, &grid, 3, 4, &cfg).unwrap();
    let b = select_eta(&x, &labels, &prior, &grid, 3, 4, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(grid.contains(&a.eta));
    assert_eq!(a.scores.len(), 3);
    assert!(a.all_monotone);
    // Held-out agreement counts are bounded by the 30 labeled points.
    assert!(a.scores.iter().all(|&s| (0.0..=30.0).contains(&s)));
    let best = a.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.scores[grid.iter().position(|&g| g == a.eta).unwrap()], best);

    assert!(select_eta(&x, &labels, &prior, &[], 3, 4, &cfg).is_err());
    assert!(select_eta(&x, &labels, &prior, &[-1.0], 3, 4, &cfg).is_err());
    assert!(select_eta(&x, &labels, &prior, &[1.0], 31, 4, &cfg).is_err());
}

#[test]
fn default_eta_grid_is_decades() {
    assert_eq!(default_eta_grid(), vec![1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-5, 1e-6]);
}
