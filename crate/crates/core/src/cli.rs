//! Command-line interface.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure, 5 engine divergence in `benchmark`. Every output goes under `--out`.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::{self, CsvOptions};
use crate::eval::{self, EvalOptions, Kernel, KernelSpec, RegressionTask};
use crate::gmm::{self, FitOptions, MixtureModel, TrainingTrace};
use crate::impute::{self, ImputationResult};
use crate::patterns::PatternPlan;
use crate::{Dataset, Engine, Error, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_DIVERGENCE: i32 = 5;

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "GMM_THREADS";

pub const DEFAULT_FRACTIONS: [f64; 6] = [0.0, 0.05, 0.1, 0.2, 0.3, 0.4];

#[derive(Debug, Parser)]
#[command(name = "fastem", version, about = "Gaussian mixtures on incomplete data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a mixture and write model.json, report.json and plan.json.
    Train(TrainArgs),
    /// Fill missing cells and write imputed.csv and provenance.csv.
    Impute(ImputeArgs),
    /// Fit with both engines and compare time and parameters.
    Benchmark(BenchmarkArgs),
    /// Compare imputation pipelines followed by kernel ridge regression.
    Eval(EvalArgs),
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    /// CSV file; empty cells, NA and NaN are missing.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// The first CSV line is a header.
    #[arg(long)]
    pub header: bool,
    /// Extra missing-value marker (repeatable).
    #[arg(long = "missing-marker")]
    pub missing_markers: Vec<String>,
}

impl DataArgs {
    fn csv_options(&self) -> CsvOptions {
        let mut o = CsvOptions {
            has_header: self.header,
            ..CsvOptions::default()
        };
        o.missing_markers.extend(self.missing_markers.iter().cloned());
        o
    }

    fn load(&self, path: &Path) -> crate::Result<Dataset> {
        data::load_csv(path, &self.csv_options())
    }

    fn require(&self) -> Result<Dataset, Failure> {
        let path = self.data.as_ref().ok_or_else(|| Failure::config("--data is required"))?;
        Ok(self.load(path)?)
    }
}

/// Training flags; each overrides the same key of `--config`.
#[derive(Debug, Args, Clone, Default)]
pub struct TrainFlags {
    /// JSON file with training settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub engine: Option<Engine>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
    /// Relative log-likelihood tolerance; 0 runs all iterations.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long = "pc-fraction")]
    pub pc_fraction: Option<f64>,
    /// Recompute workspaces at every k-th tree depth; 0 only at roots.
    #[arg(long = "recompute-every")]
    pub recompute_every: Option<usize>,
    #[arg(long = "kmeans-iters")]
    pub kmeans_iters: Option<usize>,
    #[arg(long = "max-graph")]
    pub max_graph: Option<usize>,
    #[arg(long = "fix-weights")]
    pub fix_weights: bool,
    /// Worker threads (falls back to GMM_THREADS, then 1).
    #[arg(long)]
    pub threads: Option<usize>,
}

impl clap::ValueEnum for Engine {
    fn value_variants<'a>() -> &'a [Self] {
        &[Engine::Naive, Engine::Fast]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            Engine::Naive => "naive",
            Engine::Fast => "fast",
        }))
    }
}

impl TrainFlags {
    pub fn resolve(&self) -> Result<TrainConfig, Failure> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
                serde_json::from_str::<TrainConfig>(&text)
                    .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?
            }
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(components, engine, seed, max_iters, ridge, pc_fraction, kmeans_iters, max_graph);
        if let Some(t) = self.tol {
            c.rel_ll_tolerance = t;
        }
        if let Some(k) = self.recompute_every {
            c.recompute_every = (k > 0).then_some(k);
        }
        if self.fix_weights {
            c.fix_weights = true;
        }
        c.threads = resolve_threads(self.threads)?;
        c.validate()?;
        Ok(c)
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<usize, Failure> {
    let t = match flag {
        Some(t) => t,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Failure::config(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
            Err(_) => 1,
        },
    };
    if t == 0 {
        return Err(Failure::config("thread count must be positive"));
    }
    Ok(t)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Validation CSV for early stopping.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Strategy {
    Mixture,
    Mean,
    Knn,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub strategy: Strategy,
    /// Model JSON (mixture strategy).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// CSV whose column means fill cells (mean strategy); defaults to --data.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Complete CSV used for neighbour distances (knn strategy).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Generate a mixture sample with run-shaped holes instead of reading --data.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 800)]
    pub n: usize,
    #[arg(long, default_value_t = 40)]
    pub d: usize,
    /// Longest run of missing columns per synthetic row (default d/2).
    #[arg(long = "max-run")]
    pub max_run: Option<usize>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Largest tolerated parameter divergence between engines.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    /// Perturb the fast engine's result before comparing (tests the guard).
    #[arg(long = "inject-fault", hide = true)]
    pub inject_fault: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridChoice {
    /// Every kernel and ridge weight.
    Full,
    /// Linear and degree-2 polynomial kernels only.
    Quick,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Use the built-in synthetic regression task (4000 rows, 8 inputs).
    #[arg(long)]
    pub synthetic: bool,
    /// Target column of --data (default: last).
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long = "n-train")]
    pub n_train: Option<usize>,
    #[arg(long = "n-val")]
    pub n_val: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    /// Candidate mixture sizes, chosen by validation log-likelihood.
    #[arg(long = "components", value_delimiter = ',', default_value = "1,2,4,8")]
    pub components: Vec<usize>,
    #[arg(long, value_enum, default_value = "full")]
    pub grid: GridChoice,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// An error with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) => EXIT_CONFIG,
        Error::Parse { .. }
        | Error::RaggedRows { .. }
        | Error::ShapeMismatch(_)
        | Error::DimensionMismatch { .. }
        | Error::IncompleteReference
        | Error::Io(_)
        | Error::Serde(_) => EXIT_DATA,
        Error::NotPositiveDefinite { .. }
        | Error::IndexAlreadyPresent(_)
        | Error::IndexNotPresent(_)
        | Error::SingularSystem
        | Error::Numerical { .. } => EXIT_NUMERICAL,
    }
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct PhaseTimings {
    pub pattern_extraction_ms: f64,
    pub mst_ms: f64,
    pub init_ms: f64,
    pub e_step_ms: Vec<f64>,
    pub m_step_ms: Vec<f64>,
    pub total_ms: f64,
}

impl PhaseTimings {
    fn from_trace(t: &TrainingTrace) -> Self {
        Self {
            pattern_extraction_ms: t.pattern_ms,
            mst_ms: t.mst_ms,
            init_ms: t.init_ms,
            e_step_ms: t.iterations.iter().map(|r| r.e_step_ms).collect(),
            m_step_ms: t.iterations.iter().map(|r| r.m_step_ms).collect(),
            total_ms: t.total_ms,
        }
    }
}

/// `report.json`. Keys are stable; commands fill the parts that apply to them.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub engine: Option<Engine>,
    pub config: serde_json::Value,
    pub timings: PhaseTimings,
    /// Mean training log-likelihood after every executed iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub stop_reason: Option<gmm::StopReason>,
    pub patterns: Option<usize>,
    pub tree_weight: Option<usize>,
    pub artifacts: Vec<String>,
    /// Command-specific results.
    pub details: serde_json::Value,
}

impl RunReport {
    fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            engine: None,
            config: serde_json::Value::Null,
            timings: PhaseTimings::default(),
            trace: Vec::new(),
            iterations: 0,
            stop_reason: None,
            patterns: None,
            tree_weight: None,
            artifacts: Vec::new(),
            details: serde_json::Value::Null,
        }
    }

    fn with_training(mut self, config: &TrainConfig, trace: &TrainingTrace) -> Self {
        self.engine = Some(config.engine);
        self.config = serde_json::to_value(config).unwrap_or_default();
        self.timings = PhaseTimings::from_trace(trace);
        self.trace = trace.iterations.iter().map(|r| r.log_likelihood).collect();
        self.iterations = trace.iterations.len();
        self.stop_reason = Some(trace.stop_reason);
        self.patterns = Some(trace.patterns);
        self.tree_weight = Some(trace.tree_weight);
        self
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: Command) -> Result<i32, Failure> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Impute(a) => cmd_impute(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
        Command::Eval(a) => cmd_eval(&a),
    }
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::from(Error::from(e)))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path).map_err(Error::from)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

fn artifact(report: &mut RunReport, path: &Path) {
    report.artifacts.push(path.display().to_string());
}

pub fn cmd_train(args: &TrainArgs) -> Result<i32, Failure> {
    let config = args.train.resolve()?;
    let dataset = args.data.require()?;
    let validation = args.validation.as_ref().map(|p| args.data.load(p)).transpose()?;
    prepare_out(&args.out)?;
    let (model, trace) = gmm::fit_with(
        &dataset,
        &config,
        FitOptions {
            validation: validation.as_ref(),
            ..FitOptions::default()
        },
    )?;
    let mut report = RunReport::new("train").with_training(&config, &trace);

    let model_path = args.out.join("model.json");
    let mut json = model.to_json()?;
    json.push('\n');
    std::fs::write(&model_path, json).map_err(Error::from)?;
    artifact(&mut report, &model_path);

    let plan_path = args.out.join("plan.json");
    let plan = PatternPlan::build(&dataset, config.max_graph, config.recompute_every);
    write_json(&plan_path, &plan.diagnostic())?;
    artifact(&mut report, &plan_path);

    let report_path = args.out.join("report.json");
    artifact(&mut report, &report_path);
    write_json(&report_path, &report)?;
    Ok(EXIT_OK)
}

pub fn cmd_impute(args: &ImputeArgs) -> Result<i32, Failure> {
    if args.strategy == Strategy::Mixture && args.model.is_none() {
        return Err(Failure::config("--model is required for the mixture strategy"));
    }
    if args.strategy == Strategy::Knn && args.reference.is_none() {
        return Err(Failure::config("--reference is required for the knn strategy"));
    }
    if args.k == 0 {
        return Err(Failure::config("--k must be positive"));
    }
    let dataset = args.data.require()?;
    let start = Instant::now();
    let result: ImputationResult = match args.strategy {
        Strategy::Mixture => {
            let path = args.model.as_ref().expect("checked above");
            let text = std::fs::read_to_string(path).map_err(Error::from)?;
            let model = MixtureModel::from_json(&text)?;
            impute::impute_mixture(&model, &dataset)?
        }
        Strategy::Mean => {
            let train = match &args.train {
                Some(p) => args.data.load(p)?,
                None => dataset.clone(),
            };
            impute::impute_global_mean(&dataset, &train)?
        }
        Strategy::Knn => {
            let reference = args.data.load(args.reference.as_ref().expect("checked above"))?;
            impute::impute_knn(&dataset, &reference, args.k)?
        }
    };
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    prepare_out(&args.out)?;
    let mut report = RunReport::new("impute");
    report.timings.total_ms = elapsed;

    let filled_path = args.out.join("imputed.csv");
    data::write_csv(&result.filled, create(&filled_path)?, args.data.header)?;
    artifact(&mut report, &filled_path);
    let flags_path = args.out.join("provenance.csv");
    data::write_flags_csv(&result.provenance, dataset.d(), create(&flags_path)?)?;
    artifact(&mut report, &flags_path);

    report.details = serde_json::json!({
        "strategy": result.strategy,
        "rows": dataset.n(),
        "columns": dataset.d(),
        "imputed_cells": result.provenance.iter().filter(|&&m| m).count(),
    });
    let report_path = args.out.join("report.json");
    artifact(&mut report, &report_path);
    write_json(&report_path, &report)?;
    Ok(EXIT_OK)
}

/// Largest relative Frobenius difference over means and covariances, and
/// absolute difference over weights.
pub fn max_divergence(a: &MixtureModel, b: &MixtureModel) -> f64 {
    if a.d() != b.d() || a.n_components() != b.n_components() {
        return f64::INFINITY;
    }
    let rel = |x: f64, scale: f64| if scale > 0.0 { x / scale } else { x };
    let mut worst = 0.0f64;
    for (ca, cb) in a.components.iter().zip(&b.components) {
        worst = worst.max(rel((&ca.mean - &cb.mean).norm(), ca.mean.norm()));
        worst = worst.max(rel((&ca.cov - &cb.cov).norm(), ca.cov.norm()));
        worst = worst.max((ca.weight() - cb.weight()).abs());
    }
    if worst.is_nan() {
        f64::INFINITY
    } else {
        worst
    }
}

#[derive(Debug, Serialize)]
struct EngineRun {
    engine: Engine,
    wall_ms: f64,
    timings: PhaseTimings,
    trace: Vec<f64>,
    final_log_likelihood: Option<f64>,
}

pub fn cmd_benchmark(args: &BenchmarkArgs) -> Result<i32, Failure> {
    let base = args.train.resolve()?;
    if !(args.tolerance >= 0.0) {
        return Err(Failure::config("--tolerance must be non-negative"));
    }
    let dataset = if args.synthetic {
        let max_run = args.max_run.unwrap_or((args.d / 2).max(1));
        let (full, _) = data::gen_mixture(args.n, args.d, base.components, 2.0, base.seed)?;
        data::mask_runs(&full, max_run, base.seed)?
    } else {
        args.data.require()?
    };
    prepare_out(&args.out)?;

    let mut runs = Vec::new();
    let mut models = Vec::new();
    for engine in [Engine::Fast, Engine::Naive] {
        let config = TrainConfig { engine, ..base.clone() };
        let start = Instant::now();
        let (model, trace) = gmm::fit(&dataset, &config)?;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        runs.push(EngineRun {
            engine,
            wall_ms,
            timings: PhaseTimings::from_trace(&trace),
            trace: trace.iterations.iter().map(|r| r.log_likelihood).collect(),
            final_log_likelihood: trace.iterations.last().map(|r| r.log_likelihood),
        });
        models.push((model, trace));
    }
    if args.inject_fault {
        let c = &mut models[0].0.components[0];
        c.mean[0] += 1e-3 * (1.0 + c.mean[0].abs());
    }
    let divergence = max_divergence(&models[0].0, &models[1].0);
    let ll_gap = match (runs[0].final_log_likelihood, runs[1].final_log_likelihood) {
        (Some(a), Some(b)) => (a - b).abs(),
        _ => 0.0,
    };
    let passed = divergence <= args.tolerance;
    let ratio = runs[1].wall_ms / runs[0].wall_ms.max(f64::MIN_POSITIVE);

    let mut report = RunReport::new("benchmark").with_training(&base, &models[0].1);
    report.engine = None;
    report.details = serde_json::json!({
        "rows": dataset.n(),
        "columns": dataset.d(),
        "missing_cells": dataset.missing_count(),
        "speedup_naive_over_fast": ratio,
        "max_parameter_divergence": divergence,
        "final_log_likelihood_gap": ll_gap,
        "tolerance": args.tolerance,
        "passed": passed,
        "runs": runs,
    });
    let report_path = args.out.join("report.json");
    artifact(&mut report, &report_path);
    write_json(&report_path, &report)?;
    if passed {
        Ok(EXIT_OK)
    } else {
        eprintln!("error: engines diverge by {divergence:e} (tolerance {:e})", args.tolerance);
        Ok(EXIT_DIVERGENCE)
    }
}

/// Linear and degree-2 polynomial kernels over every ridge weight.
pub fn quick_grid() -> Vec<KernelSpec> {
    eval::default_grid()
        .into_iter()
        .filter(|s| match s.kernel {
            Kernel::Linear => true,
            Kernel::Polynomial { degree, .. } => degree <= 2,
            Kernel::Gaussian { .. } => false,
        })
        .collect()
}

/// Official split sizes of the abalone benchmark, applied when a source has exactly its row count.
const ABALONE_ROWS: usize = 4177;

pub fn cmd_eval(args: &EvalArgs) -> Result<i32, Failure> {
    let fractions = args.fractions.clone().unwrap_or_else(|| DEFAULT_FRACTIONS.to_vec());
    if fractions.is_empty() || args.seeds.is_empty() || args.components.is_empty() {
        return Err(Failure::config("fractions, seeds and components must be non-empty"));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..1.0).contains(*f)) {
        return Err(Failure::config(format!("missing fraction {f} must lie in [0, 1)")));
    }
    if args.components.contains(&0) {
        return Err(Failure::config("component counts must be positive"));
    }
    let threads = resolve_threads(args.threads)?;
    let source = if args.synthetic {
        data::gen_regression(4000, 8, 0)?
    } else {
        let ds = args.data.require()?;
        if !ds.is_complete() {
            return Err(Failure {
                code: EXIT_DATA,
                message: "eval needs a complete source dataset (or --synthetic)".into(),
            });
        }
        ds
    };
    let target = args.target.unwrap_or(source.d().saturating_sub(1));
    let (default_train, default_val) = match source.n() {
        4000 if args.synthetic => (2000, 1000),
        ABALONE_ROWS => (2000, 1133),
        n => (n / 2, n / 4),
    };
    let task = RegressionTask::sequential(
        &source,
        target,
        args.n_train.unwrap_or(default_train),
        args.n_val.unwrap_or(default_val),
    )?;
    let options = EvalOptions {
        components: args.components.clone(),
        grid: match args.grid {
            GridChoice::Full => eval::default_grid(),
            GridChoice::Quick => quick_grid(),
        },
        threads,
        ..EvalOptions::default()
    };
    prepare_out(&args.out)?;
    let start = Instant::now();
    let result = eval::compare_pipelines(&task, &fractions, &args.seeds, &options)?;
    let mut report = RunReport::new("eval");
    report.timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
    report.config = serde_json::json!({
        "fractions": fractions,
        "seeds": args.seeds,
        "components": args.components,
        "grid_size": options.grid.len(),
        "mixture": serde_json::to_value(&options.train).unwrap_or_default(),
        "rows": { "train": task.train.len(), "validation": task.validation.len(), "test": task.test.len() },
        "target": target,
    });

    let csv_path = args.out.join("results.csv");
    result.write_csv(create(&csv_path)?)?;
    artifact(&mut report, &csv_path);
    let summary_path = args.out.join("summary.json");
    result.write_summary_json(create(&summary_path)?)?;
    artifact(&mut report, &summary_path);
    report.details = serde_json::json!({ "rows": result.rows });
    let report_path = args.out.join("report.json");
    artifact(&mut report, &report_path);
    write_json(&report_path, &report)?;
    Ok(EXIT_OK)
}
