//! Cross-validated comparison of multi-annotator models and single-label
//! baselines as the share of labeled training points varies.
//!
//! Per seed: simulate labelers on the full dataset, split stratified folds,
//! and for every (fold, proportion) cell mask training labels, standardize on
//! the training fold, build the graph over all training points, fit every
//! method and score the held-out fold against the ground truth. Test points
//! are seen only at scoring time, without their annotator labels.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info};
use ndarray::Array2;
use rayon::prelude::*;

use super::baselines::{logistic_fit_detailed, majority_vote};
use super::metrics::{accuracy, roc_auc};
use crate::data::{mask_labels, standardize, stratified_kfold, Dataset, LabelMatrix, ScalingParams};
use crate::error::{Error, Result};
use crate::graph::{GraphConfig, GraphPrior};
use crate::math::mix_seed;
use crate::models::{fit, predict, select_eta, FitConfig, LogisticParams, ModelKind};
use crate::sim::{simulate_labelers, SimConfig};

pub const RESULTS_HEADER: &str = "method,proportion,seed,fold,accuracy,auc,converged,iterations";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Lgp,
    Id,
    MlOriginal,
    MajorityVoteLr,
    /// Logistic regression on annotator `t`'s labels alone.
    AnnotatorLr(usize),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Lgp => f.write_str("LGP"),
            Method::Id => f.write_str("ID"),
            Method::MlOriginal => f.write_str("ML-ORIGINAL"),
            Method::MajorityVoteLr => f.write_str("MAJORITY-VOTE-LR"),
            Method::AnnotatorLr(t) => write!(f, "ANNOTATOR-{t}-LR"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('_', "-");
        match norm.as_str() {
            "LGP" => return Ok(Method::Lgp),
            "ID" => return Ok(Method::Id),
            "ML-ORIGINAL" => return Ok(Method::MlOriginal),
            "MAJORITY-VOTE-LR" => return Ok(Method::MajorityVoteLr),
            _ => {}
        }
        norm.strip_prefix("ANNOTATOR-")
            .and_then(|r| r.strip_suffix("-LR"))
            .and_then(|t| t.parse().ok())
            .map(Method::AnnotatorLr)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown method {s:?} (expected lgp, id, ml-original, majority-vote-lr or annotator-<t>-lr)"
                ))
            })
    }
}

impl Method {
    fn model_kind(self) -> Option<ModelKind> {
        match self {
            Method::Lgp => Some(ModelKind::Lgp),
            Method::Id => Some(ModelKind::Id),
            Method::MlOriginal => Some(ModelKind::MlOriginal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Labeler simulation; its seed is replaced by each experiment seed.
    pub sim: SimConfig,
    pub proportions: Vec<f64>,
    pub folds: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Standardize features on each training fold.
    pub standardize: bool,
    pub graph: GraphConfig,
    /// When non-empty, LGP picks `η` from this grid per cell by
    /// cross-validation on the training labels, overriding `graph.eta`.
    pub eta_grid: Vec<f64>,
    pub eta_folds: usize,
    pub fit: FitConfig,
    /// Ridge for the logistic-regression baselines.
    pub baseline_ridge: f64,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            proportions: (1..=10).map(|k| k as f64 / 10.0).collect(),
            folds: 5,
            seeds: vec![1, 2, 3, 4, 5],
            methods: vec![Method::Lgp, Method::Id, Method::MlOriginal, Method::MajorityVoteLr],
            standardize: true,
            graph: GraphConfig::default(),
            eta_grid: Vec::new(),
            eta_folds: 3,
            fit: FitConfig::default(),
            baseline_ridge: 1e-4,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub proportion: f64,
    pub seed: u64,
    pub fold: usize,
    /// NaN when the cell failed.
    pub accuracy: f64,
    pub auc: f64,
    pub converged: bool,
    pub iterations: usize,
    /// EM monotonicity of every fit in the cell; `None` for baselines.
    pub monotone: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: Method,
    pub proportion: f64,
    /// Cells with a finite accuracy.
    pub count: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
}

fn mean_std(values: impl Iterator<Item = f64>) -> (usize, f64, f64) {
    let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (0, f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (v.len(), mean, std)
}

impl ExperimentResult {
    /// Mean and sample standard deviation per (method, proportion), in row order.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut keys: Vec<(Method, f64)> = Vec::new();
        for r in &self.rows {
            if !keys.iter().any(|&(m, p)| m == r.method && p == r.proportion) {
                keys.push((r.method, r.proportion));
            }
        }
        keys.into_iter()
            .map(|(method, proportion)| {
                let cell = || self.rows.iter().filter(move |r| r.method == method && r.proportion == proportion);
                let (count, accuracy_mean, accuracy_std) = mean_std(cell().map(|r| r.accuracy));
                let (_, auc_mean, auc_std) = mean_std(cell().map(|r| r.auc));
                AggregateRow {
                    method,
                    proportion,
                    count,
                    accuracy_mean,
                    accuracy_std,
                    auc_mean,
                    auc_std,
                }
            })
            .collect()
    }

    /// Mean accuracy of `method` at `proportion`, if any cell succeeded.
    pub fn mean_accuracy(&self, method: Method, proportion: f64) -> Option<f64> {
        self.aggregate()
            .into_iter()
            .find(|a| a.method == method && a.proportion == proportion && a.count > 0)
            .map(|a| a.accuracy_mean)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(RESULTS_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.method, r.proportion, r.seed, r.fold, r.accuracy, r.auc, r.converged, r.iterations
            ));
        }
        s
    }

    pub fn aggregate_csv(&self) -> String {
        let mut s = String::from("method,proportion,count,accuracy_mean,accuracy_std,auc_mean,auc_std\n");
        for a in self.aggregate() {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                a.method, a.proportion, a.count, a.accuracy_mean, a.accuracy_std, a.auc_mean, a.auc_std
            ));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_csv())
    }

    pub fn write_aggregate_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.aggregate_csv())
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

struct CellOutcome {
    accuracy: f64,
    auc: f64,
    converged: bool,
    iterations: usize,
    monotone: Option<bool>,
}

/// Training data for one (seed, fold, proportion) cell, in standardized space.
struct Cell {
    x_train: Array2<f64>,
    labels: LabelMatrix,
    x_test: Array2<f64>,
    truth_test: Vec<u8>,
    prior: Option<GraphPrior>,
    select_seed: u64,
}

fn score(cell: &Cell, probs: &[f64]) -> Result<(f64, f64)> {
    let pred: Vec<u8> = probs.iter().map(|&p| u8::from(p >= 0.5)).collect();
    let acc = accuracy(&pred, &cell.truth_test)?;
    let auc = roc_auc(probs, &cell.truth_test).map_or(f64::NAN, |r| r.auc);
    Ok((acc, auc))
}

fn logistic_probs(params: &LogisticParams, x: &Array2<f64>) -> Vec<f64> {
    x.rows().into_iter().map(|r| params.prob(r)).collect()
}

fn run_method(method: Method, cell: &Cell, cfg: &ExperimentConfig) -> Result<CellOutcome> {
    if let Some(kind) = method.model_kind() {
        let mut prior = cell.prior.clone();
        let mut monotone = true;
        if let (ModelKind::Lgp, Some(g)) = (kind, prior.as_mut()) {
            if !cfg.eta_grid.is_empty() {
                let sel = select_eta(&cell.x_train, &cell.labels, g, &cfg.eta_grid, cfg.eta_folds, cell.select_seed, &cfg.fit)?;
                debug!("selected eta {} from {:?}", sel.eta, sel.scores);
                g.eta = sel.eta;
                monotone = sel.all_monotone;
            }
        }
        let model = fit(kind, &cell.x_train, &cell.labels, prior.as_ref(), &cfg.fit)?;
        let probs = cell
            .x_test
            .rows()
            .into_iter()
            .map(|r| predict(&model, r, None))
            .collect::<Result<Vec<_>>>()?;
        let (accuracy, auc) = score(cell, &probs)?;
        return Ok(CellOutcome {
            accuracy,
            auc,
            converged: model.diagnostics.converged,
            iterations: model.diagnostics.iterations,
            monotone: Some(monotone && model.diagnostics.monotone),
        });
    }
    let (rows, y): (Vec<usize>, Vec<u8>) = match method {
        Method::MajorityVoteLr => majority_vote(&cell.labels)
            .into_iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|y| (i, y)))
            .unzip(),
        Method::AnnotatorLr(t) => {
            if t >= cell.labels.num_annotators() {
                return Err(Error::invalid(format!(
                    "annotator {t} out of range for {} annotators",
                    cell.labels.num_annotators()
                )));
            }
            (0..cell.labels.num_points())
                .filter_map(|i| cell.labels.get(i, t).map(|y| (i, y)))
                .unzip()
        }
        _ => unreachable!("model methods handled above"),
    };
    let x = cell.x_train.select(ndarray::Axis(0), &rows);
    let lr = logistic_fit_detailed(&x, &y, cfg.baseline_ridge)?;
    let (accuracy, auc) = score(cell, &logistic_probs(&lr.params, &cell.x_test))?;
    Ok(CellOutcome {
        accuracy,
        auc,
        converged: lr.converged,
        iterations: lr.iterations,
        monotone: None,
    })
}

struct Job {
    seed_index: usize,
    fold: usize,
    proportion_index: usize,
}

/// Runs every (seed, fold, proportion, method) cell. Failures inside a cell
/// are recorded in its row; setup failures (bad configuration, simulation or
/// fold construction) abort the run.
pub fn run_experiment(ds: &Dataset, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let truth = ds
        .ground_truth()
        .ok_or_else(|| Error::invalid("experiments need ground-truth labels"))?;
    if cfg.methods.is_empty() || cfg.seeds.is_empty() || cfg.proportions.is_empty() {
        return Err(Error::invalid("need at least one method, seed and proportion"));
    }
    if let Some(p) = cfg.proportions.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::invalid(format!("proportion {p} outside (0, 1]")));
    }
    cfg.fit.validate()?;

    // Labelers are simulated once per seed on the full dataset.
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let sim = SimConfig { seed, ..cfg.sim.clone() };
        let (labels, _) = simulate_labelers(ds, &sim)?;
        let folds = stratified_kfold(ds, cfg.folds, mix_seed(seed, 0xF01D))?;
        per_seed.push((labels, folds));
    }

    let jobs: Vec<Job> = (0..cfg.seeds.len())
        .flat_map(|s| {
            (0..cfg.folds).flat_map(move |f| {
                (0..cfg.proportions.len()).map(move |p| Job {
                    seed_index: s,
                    fold: f,
                    proportion_index: p,
                })
            })
        })
        .collect();

    let run_job = |job: &Job| -> Vec<ResultRow> {
        let seed = cfg.seeds[job.seed_index];
        let proportion = cfg.proportions[job.proportion_index];
        let (labels, folds) = &per_seed[job.seed_index];
        let (train, test) = &folds[job.fold];
        let cell = prepare_cell(ds, truth, labels, train, test, seed, job, cfg);
        cfg.methods
            .iter()
            .map(|&method| {
                let outcome = cell.as_ref().map_err(|e| Error::invalid(e.to_string())).and_then(|c| run_method(method, c, cfg));
                match outcome {
                    Ok(o) => ResultRow {
                        method,
                        proportion,
                        seed,
                        fold: job.fold,
                        accuracy: o.accuracy,
                        auc: o.auc,
                        converged: o.converged,
                        iterations: o.iterations,
                        monotone: o.monotone,
                        error: None,
                    },
                    Err(e) => {
                        log::warn!("{method} seed {seed} fold {} proportion {proportion}: {e}", job.fold);
                        ResultRow {
                            method,
                            proportion,
                            seed,
                            fold: job.fold,
                            accuracy: f64::NAN,
                            auc: f64::NAN,
                            converged: false,
                            iterations: 0,
                            monotone: None,
                            error: Some(e.to_string()),
                        }
                    }
                }
            })
            .collect()
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let mut rows: Vec<ResultRow> = pool.install(|| jobs.par_iter().flat_map_iter(run_job).collect());

    let method_rank = |m: &Method| cfg.methods.iter().position(|x| x == m).unwrap_or(usize::MAX);
    let seed_rank = |s: u64| cfg.seeds.iter().position(|&x| x == s).unwrap_or(usize::MAX);
    let prop_rank = |p: f64| cfg.proportions.iter().position(|&x| x == p).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (method_rank(&r.method), prop_rank(r.proportion), seed_rank(r.seed), r.fold));
    info!("experiment finished: {} rows", rows.len());
    Ok(ExperimentResult { rows })
}

#[allow(clippy::too_many_arguments)]
fn prepare_cell(
    ds: &Dataset,
    truth: &[u8],
    labels: &LabelMatrix,
    train: &[usize],
    test: &[usize],
    seed: u64,
    job: &Job,
    cfg: &ExperimentConfig,
) -> Result<Cell> {
    let proportion = cfg.proportions[job.proportion_index];
    let train_ds = ds.subset(train)?;
    let test_ds = ds.subset(test)?;
    let train_truth = train_ds.ground_truth().expect("subset keeps truth").to_vec();
    let mask_seed = mix_seed(mix_seed(seed, 0x3A5C + job.fold as u64), job.proportion_index as u64);
    let masked = mask_labels(&labels.subset(train), proportion, mask_seed, &train_truth)?;

    let (x_train, scaling) = if cfg.standardize {
        let (scaled, params) = standardize(&train_ds);
        (scaled.features().clone(), params)
    } else {
        (train_ds.features().clone(), ScalingParams::identity(ds.num_features()))
    };
    let x_test = scaling.transform(test_ds.features())?;
    let prior = if cfg.methods.contains(&Method::Lgp) {
        Some(GraphPrior::build(&x_train, &cfg.graph)?)
    } else {
        None
    };
    Ok(Cell {
        x_train,
        labels: masked,
        x_test,
        truth_test: test.iter().map(|&i| truth[i]).collect(),
        prior,
        select_seed: mix_seed(mask_seed, 0xE7A),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: Method, proportion: f64, fold: usize, accuracy: f64) -> ResultRow {
        ResultRow {
            method,
            proportion,
            seed: 1,
            fold,
            accuracy,
            auc: accuracy,
            converged: true,
            iterations: 3,
            monotone: None,
            error: None,
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in [
            Method::Lgp,
            Method::Id,
            Method::MlOriginal,
            Method::MajorityVoteLr,
            Method::AnnotatorLr(3),
        ] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
            assert_eq!(m.to_string().to_lowercase().parse::<Method>().unwrap(), m);
        }
        assert_eq!("ml_original".parse::<Method>().unwrap(), Method::MlOriginal);
        assert!("annotator-x-lr".parse::<Method>().is_err());
        assert!("svm".parse::<Method>().is_err());
    }

    #[test]
    fn aggregate_uses_sample_std_and_skips_nan() {
        let result = ExperimentResult {
            rows: vec![
                row(Method::Lgp, 0.2, 0, 0.5),
                row(Method::Lgp, 0.2, 1, 0.7),
                row(Method::Lgp, 0.2, 2, 0.9),
                row(Method::Lgp, 0.2, 3, f64::NAN),
                row(Method::Id, 0.2, 0, 0.25),
            ],
        };
        let agg = result.aggregate();
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].count, 3);
        assert!((agg[0].accuracy_mean - 0.7).abs() < 1e-15);
        assert!((agg[0].accuracy_std - 0.2).abs() < 1e-15);
        assert_eq!((agg[1].count, agg[1].accuracy_std), (1, 0.0));
        assert_eq!(result.mean_accuracy(Method::Id, 0.2), Some(0.25));
        assert_eq!(result.mean_accuracy(Method::Id, 0.5), None);
    }

    #[test]
    fn csv_layout() {
        let result = ExperimentResult {
            rows: vec![row(Method::AnnotatorLr(0), 0.5, 2, 0.75)],
        };
        assert_eq!(
            result.to_csv(),
            format!("{RESULTS_HEADER}\nANNOTATOR-0-LR,0.5,1,2,0.75,0.75,true,3\n")
        );
        assert!(result.aggregate_csv().starts_with("method,proportion,count,"));
    }
}
