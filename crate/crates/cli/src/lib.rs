//! `lgp` command-line tool: simulate labelers, train and apply
//! multi-annotator models, and run label-proportion experiments.
//!
//! [`run`] takes the full argument list (program name first) and writes
//! human-readable output to the given sink, so tests can drive it in-process.

mod config;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::LevelFilter;

use lgp_core::data::{load_csv, standardize, Dataset, LabelMatrix, ScalingParams};
use lgp_core::eval::{run_experiment, ExperimentConfig, Method};
use lgp_core::graph::{GraphConfig, GraphPrior};
use lgp_core::models::{default_eta_grid, fit, select_eta, FitConfig, ModelKind, TrainedModel};
use lgp_core::sim::{simulate_labelers, summarize, write_assignments_csv, SimConfig};

pub use config::{BandwidthSetting, RunConfig};
use config::{bandwidth_from_config, check_positive, check_range, parse_bandwidth};

const ANNOTATOR_RIDGE: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "lgp", version, about = "Learning from multiple annotators with a graph-Laplacian prior")]
struct Cli {
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate clustered expert labelers over a dataset with ground truth.
    Simulate(SimulateArgs),
    /// Fit a model to a dataset and its annotator labels.
    Train(TrainArgs),
    /// Apply a trained model to new points.
    Predict(PredictArgs),
    /// Cross-validated accuracy and AUC across label proportions.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Features CSV.
    #[arg(long, visible_alias = "input")]
    data: Option<PathBuf>,
    /// The CSV has no header row.
    #[arg(long)]
    no_header: bool,
    /// Ground-truth column: 0-based index, "last" or "none"
    /// [default: none for predict, last otherwise].
    #[arg(long, value_name = "COLUMN")]
    label_column: Option<String>,
    /// Flat TOML file of defaults; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Number of labelers, also the k-means cluster count [default: 5].
    #[arg(long)]
    labelers: Option<usize>,
    /// Fraction of off-cluster labels each labeler flips [default: 0.35].
    #[arg(long)]
    error_rate: Option<f64>,
    /// k-means restarts [default: 10].
    #[arg(long)]
    kmeans_restarts: Option<usize>,
    /// RNG seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Output labels CSV (point,annotator,label).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output cluster assignments CSV [default: <out>.clusters.csv].
    #[arg(long)]
    clusters_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Graph-prior strength η [default: 1].
    #[arg(long)]
    eta: Option<f64>,
    /// Choose η per fit by cross-validation over this grid: "default"
    /// (1, 0.1, ..., 1e-6), a comma-separated list, or "none" [default: none].
    #[arg(long, value_name = "GRID")]
    eta_grid: Option<String>,
    /// Folds for η selection [default: 3].
    #[arg(long)]
    eta_folds: Option<usize>,
    /// Kernel bandwidth: a positive number or "median" [default: median].
    #[arg(long)]
    bandwidth: Option<String>,
    /// Keep only the k strongest neighbors per point [default: dense graph].
    #[arg(long)]
    knn: Option<usize>,
    /// Lower clamp on annotator σ [default: 0.001].
    #[arg(long)]
    sigma_min: Option<f64>,
    /// EM threshold on the squared change of annotator parameters [default: 1e-6].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Maximum EM iterations [default: 200].
    #[arg(long)]
    max_iter: Option<usize>,
    /// Add a 1e-6 ridge on annotator parameters [default: off].
    #[arg(long)]
    ridge: bool,
    /// Use raw features instead of standardizing on the training data.
    #[arg(long)]
    no_standardize: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model: id, lgp or ml-original [default: lgp].
    #[arg(long)]
    model: Option<String>,
    /// Annotator labels CSV (point,annotator,label).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output model file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for η selection folds [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Optional labels for the new points (point,annotator,label).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output CSV (point,p1,label) [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Labeled-point proportions [default: 0.1,0.2,...,1].
    #[arg(long, value_delimiter = ',')]
    proportions: Option<Vec<f64>>,
    /// Cross-validation folds [default: 5].
    #[arg(long)]
    folds: Option<usize>,
    /// Seeds; each re-simulates the labelers and the folds [default: 1,2,3,4,5].
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Methods: lgp, id, ml-original, majority-vote-lr, annotator-<t>-lr
    /// [default: lgp,id,ml-original,majority-vote-lr].
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Number of labelers [default: 5].
    #[arg(long)]
    labelers: Option<usize>,
    /// Off-cluster error rate [default: 0.35].
    #[arg(long)]
    error_rate: Option<f64>,
    /// k-means restarts [default: 10].
    #[arg(long)]
    kmeans_restarts: Option<usize>,
    /// Ridge of the logistic-regression baselines [default: 1e-4].
    #[arg(long)]
    baseline_ridge: Option<f64>,
    /// Worker threads; 0 uses every core. Results do not depend on it [default: 0].
    #[arg(long)]
    jobs: Option<usize>,
    /// Per-cell results CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Aggregate CSV [default: <out>.aggregate.csv].
    #[arg(long)]
    aggregate_out: Option<PathBuf>,
    #[command(flatten)]
    fit: FitArgs,
}

/// Parses `args` (program name first) and runs the chosen subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            write!(out, "{e}")?;
            return Ok(());
        }
        Err(e) => bail!("{e}"),
    };
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Experiment(a) => cmd_experiment(a, out),
    }
}

fn required(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| config.clone())
        .with_context(|| format!("--{name} is required"))
}

fn default_sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn count_columns(path: &Path) -> Result<usize> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .with_context(|| format!("{} is empty", path.display()))?;
    Ok(first.split(',').count())
}

fn load_dataset(args: &DataArgs, cfg: &RunConfig, default_column: &str) -> Result<Dataset> {
    let path = required(args.data.clone(), &cfg.input, "data")?;
    let header = !args.no_header && cfg.header.unwrap_or(true);
    let column = args.label_column.as_deref().unwrap_or(default_column);
    let label_column = match column.to_ascii_lowercase().as_str() {
        "none" => None,
        "last" => Some(count_columns(&path)? - 1),
        c => Some(c.parse::<usize>().with_context(|| format!("--label-column {c:?}"))?),
    };
    load_csv(&path, header, label_column).with_context(|| format!("loading {}", path.display()))
}

struct FitSettings {
    graph: GraphConfig,
    fit: FitConfig,
    eta_grid: Vec<f64>,
    eta_folds: usize,
    standardize: bool,
}

fn parse_eta_grid(s: &str) -> Result<Vec<f64>> {
    match s.trim().to_ascii_lowercase().as_str() {
        "none" => Ok(Vec::new()),
        "default" => Ok(default_eta_grid()),
        list => list
            .split(',')
            .map(|v| v.trim().parse::<f64>().with_context(|| format!("eta grid value {v:?}")))
            .collect(),
    }
}

fn fit_settings(a: &FitArgs, cfg: &RunConfig) -> Result<FitSettings> {
    let eta = a.eta.or(cfg.eta).unwrap_or(1.0);
    if !(eta >= 0.0 && eta.is_finite()) {
        bail!("eta must be finite and non-negative, got {eta}");
    }
    let bandwidth = match (&a.bandwidth, &cfg.bandwidth) {
        (Some(s), _) => parse_bandwidth(s)?,
        (None, Some(b)) => bandwidth_from_config(b)?,
        (None, None) => None,
    };
    let knn = a.knn.or(cfg.knn);
    if knn == Some(0) {
        bail!("knn must be at least 1");
    }
    let eta_grid = match &a.eta_grid {
        Some(s) => parse_eta_grid(s)?,
        None => cfg.eta_grid.clone().unwrap_or_default(),
    };
    if let Some(e) = eta_grid.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
        bail!("eta grid values must be finite and non-negative, got {e}");
    }
    let eta_folds = a.eta_folds.or(cfg.eta_folds).unwrap_or(3);
    if eta_folds < 2 {
        bail!("eta-folds must be at least 2");
    }
    let defaults = FitConfig::default();
    let sigma_min = a.sigma_min.or(cfg.sigma_min).unwrap_or(defaults.sigma_min);
    check_range("sigma-min", sigma_min, f64::MIN_POSITIVE, 0.5)?;
    let epsilon = a.epsilon.or(cfg.epsilon).unwrap_or(defaults.epsilon);
    check_positive("epsilon", epsilon)?;
    let max_iterations = a.max_iter.or(cfg.max_iterations).unwrap_or(defaults.max_iterations);
    if max_iterations == 0 {
        bail!("max-iter must be at least 1");
    }
    let ridge = a.ridge || cfg.ridge.unwrap_or(false);
    let fit = FitConfig {
        epsilon,
        max_iterations,
        sigma_min,
        annotator_ridge: if ridge { ANNOTATOR_RIDGE } else { 0.0 },
        ..defaults
    };
    Ok(FitSettings {
        graph: GraphConfig {
            bandwidth,
            knn,
            eta,
            ..GraphConfig::default()
        },
        fit,
        eta_grid,
        eta_folds,
        standardize: !a.no_standardize && cfg.standardize.unwrap_or(true),
    })
}

fn cmd_simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load_optional(a.data.config.as_deref())?;
    let ds = load_dataset(&a.data, &cfg, "last")?;
    let truth = ds
        .ground_truth()
        .context("simulation needs a ground-truth column (see --label-column)")?
        .to_vec();
    let defaults = SimConfig::default();
    let sim = SimConfig {
        num_labelers: a.labelers.or(cfg.labelers).unwrap_or(defaults.num_labelers),
        error_rate: a.error_rate.or(cfg.error_rate).unwrap_or(defaults.error_rate),
        seed: a.seed.or(cfg.seed).unwrap_or(defaults.seed),
        kmeans_restarts: a.kmeans_restarts.or(cfg.kmeans_restarts).unwrap_or(defaults.kmeans_restarts),
    };
    check_range("error-rate", sim.error_rate, 0.0, 1.0)?;
    let labels_path = required(a.out, &cfg.out, "out")?;
    let clusters_path = a.clusters_out.unwrap_or_else(|| default_sidecar(&labels_path, ".clusters.csv"));

    let (labels, assignments) = simulate_labelers(&ds, &sim)?;
    labels.write_csv(&labels_path)?;
    write_assignments_csv(&assignments, &clusters_path)?;
    writeln!(out, "labeler,off_cluster,flips,off_cluster_error")?;
    for s in summarize(&labels, &truth, &assignments) {
        writeln!(out, "{},{},{},{:.6}", s.labeler, s.off_cluster, s.flips, s.off_cluster_error())?;
    }
    Ok(())
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load_optional(a.data.config.as_deref())?;
    let kind: ModelKind = a
        .model
        .as_deref()
        .or(cfg.model.as_deref())
        .unwrap_or("lgp")
        .parse()?;
    let settings = fit_settings(&a.fit, &cfg)?;
    let ds = load_dataset(&a.data, &cfg, "last")?;
    let labels_path = required(a.labels, &cfg.labels, "labels")?;
    let labels = LabelMatrix::read_csv(&labels_path, ds.num_points(), None)
        .with_context(|| format!("loading {}", labels_path.display()))?;
    let model_path = required(a.out, &cfg.out, "out")?;

    let (x, scaling) = if settings.standardize {
        let (scaled, params) = standardize(&ds);
        (scaled.features().clone(), params)
    } else {
        (ds.features().clone(), ScalingParams::identity(ds.num_features()))
    };
    let mut prior = match kind {
        ModelKind::Lgp => Some(GraphPrior::build(&x, &settings.graph)?),
        _ => None,
    };
    if let (Some(g), false) = (prior.as_mut(), settings.eta_grid.is_empty()) {
        let seed = a.seed.or(cfg.seed).unwrap_or(0);
        let sel = select_eta(&x, &labels, g, &settings.eta_grid, settings.eta_folds, seed, &settings.fit)?;
        writeln!(out, "selected eta {}", sel.eta)?;
        g.eta = sel.eta;
    }
    let mut model = fit(kind, &x, &labels, prior.as_ref(), &settings.fit)?;
    model.scaling = scaling;
    model.save(&model_path)?;
    let d = &model.diagnostics;
    writeln!(out, "model {}", model.kind)?;
    writeln!(out, "iterations {}", d.iterations)?;
    writeln!(out, "final objective {}", d.final_objective)?;
    writeln!(out, "converged {}", d.converged)?;
    if !d.converged {
        log::warn!("EM stopped at the iteration cap; the model was written anyway");
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load_optional(a.data.config.as_deref())?;
    let model = TrainedModel::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let ds = load_dataset(&a.data, &cfg, "none")?;
    if ds.num_features() != model.dim() {
        bail!(
            "data has {} features but the model expects {}",
            ds.num_features(),
            model.dim()
        );
    }
    let labels = match &a.labels {
        Some(p) => Some(
            LabelMatrix::read_csv(p, ds.num_points(), Some(model.num_annotators()))
                .with_context(|| format!("loading {}", p.display()))?,
        ),
        None => None,
    };
    let probs = model.predict_raw(ds.features(), labels.as_ref())?;
    let mut text = String::from("point,p1,label\n");
    for (i, p) in probs.iter().enumerate() {
        text.push_str(&format!("{i},{p},{}\n", u8::from(*p >= 0.5)));
    }
    match a.out.or(cfg.out) {
        Some(path) => {
            let mut f = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
            f.write_all(text.as_bytes())?;
            f.flush()?;
        }
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_experiment(a: ExperimentArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load_optional(a.data.config.as_deref())?;
    let settings = fit_settings(&a.fit, &cfg)?;
    let ds = load_dataset(&a.data, &cfg, "last")?;
    let defaults = ExperimentConfig::default();
    let methods = match a.methods.or(cfg.methods.clone()) {
        Some(list) => list.iter().map(|m| m.parse::<Method>()).collect::<Result<Vec<_>, _>>()?,
        None => defaults.methods.clone(),
    };
    let sim_defaults = SimConfig::default();
    let exp = ExperimentConfig {
        sim: SimConfig {
            num_labelers: a.labelers.or(cfg.labelers).unwrap_or(sim_defaults.num_labelers),
            error_rate: a.error_rate.or(cfg.error_rate).unwrap_or(sim_defaults.error_rate),
            seed: 0,
            kmeans_restarts: a.kmeans_restarts.or(cfg.kmeans_restarts).unwrap_or(sim_defaults.kmeans_restarts),
        },
        proportions: a.proportions.or(cfg.proportions.clone()).unwrap_or(defaults.proportions),
        folds: a.folds.or(cfg.folds).unwrap_or(defaults.folds),
        seeds: a.seeds.or(cfg.seeds.clone()).unwrap_or(defaults.seeds),
        methods,
        standardize: settings.standardize,
        graph: settings.graph,
        eta_grid: settings.eta_grid,
        eta_folds: settings.eta_folds,
        fit: settings.fit,
        baseline_ridge: a.baseline_ridge.or(cfg.baseline_ridge).unwrap_or(defaults.baseline_ridge),
        jobs: a.jobs.or(cfg.jobs).unwrap_or(defaults.jobs),
    };
    check_range("error-rate", exp.sim.error_rate, 0.0, 1.0)?;
    let results_path = required(a.out, &cfg.out, "out")?;
    let aggregate_path = a
        .aggregate_out
        .unwrap_or_else(|| default_sidecar(&results_path, ".aggregate.csv"));

    let result = run_experiment(&ds, &exp)?;
    result.write_csv(&results_path)?;
    result.write_aggregate_csv(&aggregate_path)?;
    let failed = result.rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {} cells failed; their rows hold NaN", result.rows.len());
    }
    out.write_all(result.aggregate_csv().as_bytes())?;
    Ok(())
}
