//! Regression on imputed inputs.
//!
//! A complete regression task is corrupted with MCAR holes in its inputs,
//! normalized on the training rows, imputed by several strategies, and each
//! imputed input matrix is fed to a kernel ridge regressor tuned on the
//! validation rows. The mixture is also used directly as a regressor through
//! `E[y | x_o]`. All errors are reported in normalized target units.

mod krr;

use std::io::Write;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use krr::{
    default_grid, grid_select, kernel_matrix, krr_fit, mse, GridResult, Kernel, KernelSpec, Krr, Monomials, Solver,
    GRID_BANDWIDTHS, GRID_DEGREES, GRID_LAMBDAS, GRID_SCALES,
};

use crate::data::{fit_normalizer, mask_mcar_columns};
use crate::gmm::{fit_with, log_likelihood, posterior_fill, FitOptions, MixtureModel, TrainConfig};
use crate::impute::{impute_global_mean, impute_knn_pool, impute_mixture};
use crate::{Dataset, Error, Result};

/// Inputs, targets and a train/validation/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTask {
    pub inputs: Dataset,
    pub targets: Vec<f64>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl RegressionTask {
    pub fn new(
        inputs: Dataset,
        targets: Vec<f64>,
        train: Vec<usize>,
        validation: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self> {
        let n = inputs.n();
        if targets.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: targets.len(),
            });
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::ShapeMismatch("targets must be complete".into()));
        }
        if train.is_empty() || validation.is_empty() || test.is_empty() {
            return Err(Error::InvalidConfig("every split needs at least one row".into()));
        }
        let mut seen = vec![false; n];
        for &r in train.iter().chain(&validation).chain(&test) {
            if r >= n {
                return Err(Error::ShapeMismatch(format!("split row {r} out of range for {n} rows")));
            }
            if std::mem::replace(&mut seen[r], true) {
                return Err(Error::InvalidConfig(format!("row {r} appears in more than one split")));
            }
        }
        Ok(Self {
            inputs,
            targets,
            train,
            validation,
            test,
        })
    }

    /// Uses column `target` of `data` as the target and splits rows in order:
    /// the first `n_train` for training, the next `n_val` for validation, the rest for testing.
    pub fn sequential(data: &Dataset, target: usize, n_train: usize, n_val: usize) -> Result<Self> {
        if target >= data.d() || data.d() < 2 {
            return Err(Error::ShapeMismatch(format!("target column {target} invalid for {} columns", data.d())));
        }
        if n_train + n_val >= data.n() {
            return Err(Error::InvalidConfig(format!(
                "split {n_train}/{n_val} leaves no test rows out of {}",
                data.n()
            )));
        }
        let targets = (0..data.n())
            .map(|i| data.get(i, target).ok_or_else(|| Error::ShapeMismatch(format!("target missing in row {i}"))))
            .collect::<Result<Vec<f64>>>()?;
        let cols: Vec<usize> = (0..data.d()).filter(|&c| c != target).collect();
        Self::new(
            data.select_columns(&cols),
            targets,
            (0..n_train).collect(),
            (n_train..n_train + n_val).collect(),
            (n_train + n_val..data.n()).collect(),
        )
    }

    /// Inputs with the target appended as the last column.
    pub fn joint(&self) -> Dataset {
        let (n, p) = (self.inputs.n(), self.inputs.d());
        let mut values = Vec::with_capacity(n * (p + 1));
        let mut mask = Vec::with_capacity(n * (p + 1));
        for i in 0..n {
            values.extend_from_slice(self.inputs.row(i));
            values.push(self.targets[i]);
            mask.extend_from_slice(self.inputs.row_mask(i));
            mask.push(false);
        }
        Dataset::new(n, p + 1, values, mask).expect("shape is consistent")
    }
}

/// `E[y | x_o]` for every row of `inputs`, where `y` is coordinate `target` of
/// the model and the remaining coordinates are the columns of `inputs` in order.
pub fn mixture_regress(model: &MixtureModel, inputs: &Dataset, target: usize) -> Result<Vec<f64>> {
    let d = model.d();
    if inputs.d() + 1 != d {
        return Err(Error::DimensionMismatch {
            expected: d - 1,
            got: inputs.d(),
        });
    }
    if target >= d {
        return Err(Error::DimensionMismatch { expected: d, got: target });
    }
    let n = inputs.n();
    let mut values = Vec::with_capacity(n * d);
    let mut mask = Vec::with_capacity(n * d);
    for i in 0..n {
        let (row, rm) = (inputs.row(i), inputs.row_mask(i));
        values.extend_from_slice(&row[..target]);
        values.push(0.0);
        values.extend_from_slice(&row[target..]);
        mask.extend_from_slice(&rm[..target]);
        mask.push(true);
        mask.extend_from_slice(&rm[target..]);
    }
    let joint = Dataset::new(n, d, values, mask)?;
    let (filled, _) = posterior_fill(model, &joint)?;
    Ok((0..n).map(|i| filled[i * d + target]).collect())
}

/// A strategy whose test error is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pipeline {
    #[serde(rename = "mixture+krr")]
    MixtureKrr,
    #[serde(rename = "mean+krr")]
    MeanKrr,
    #[serde(rename = "knn1+krr")]
    Knn1Krr,
    #[serde(rename = "knn10+krr")]
    Knn10Krr,
    #[serde(rename = "mixture-regress")]
    MixtureRegress,
}

impl Pipeline {
    pub const ALL: [Pipeline; 5] = [
        Pipeline::MixtureKrr,
        Pipeline::MeanKrr,
        Pipeline::Knn1Krr,
        Pipeline::Knn10Krr,
        Pipeline::MixtureRegress,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::MixtureKrr => "mixture+krr",
            Pipeline::MeanKrr => "mean+krr",
            Pipeline::Knn1Krr => "knn1+krr",
            Pipeline::Knn10Krr => "knn10+krr",
            Pipeline::MixtureRegress => "mixture-regress",
        }
    }
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Candidate component counts; the one with the best validation log-likelihood is kept.
    pub components: Vec<usize>,
    /// Mixture settings other than `components` and `seed`.
    pub train: TrainConfig,
    pub grid: Vec<KernelSpec>,
    /// Concurrent (fraction, seed) cells; 0 uses every core.
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            components: vec![1, 2, 4, 8],
            train: TrainConfig {
                max_iters: 200,
                ridge: 1e-3,
                ..TrainConfig::default()
            },
            grid: default_grid(),
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: String,
    pub fraction: f64,
    pub seed: u64,
    /// Test MSE in normalized target units.
    pub mse: f64,
    /// Validation MSE of the selected regressor.
    pub validation_mse: f64,
    /// Selected kernel, or the mixture size for the direct regressor.
    pub selected: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub fraction: f64,
    pub mean: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["strategy", "fraction", "seed", "mse"]).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.strategy.clone(),
                r.fraction.to_string(),
                r.seed.to_string(),
                r.mse.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Seed-averaged error per (strategy, fraction), in first-appearance order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(String, f64)> = Vec::new();
        for r in &self.rows {
            if !keys.iter().any(|(s, f)| *s == r.strategy && *f == r.fraction) {
                keys.push((r.strategy.clone(), r.fraction));
            }
        }
        keys.into_iter()
            .map(|(strategy, fraction)| {
                let v: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.strategy == strategy && r.fraction == fraction)
                    .map(|r| r.mse)
                    .collect();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let std = if v.len() > 1 {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
                } else {
                    0.0
                };
                SummaryRow {
                    strategy,
                    fraction,
                    mean,
                    std,
                    seeds: v.len(),
                }
            })
            .collect()
    }

    pub fn mean_mse(&self, pipeline: Pipeline, fraction: f64) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|s| s.strategy == pipeline.name() && s.fraction == fraction)
            .map(|s| s.mean)
    }

    /// Seed-averaged test MSE when, for every seed, the pipeline among
    /// `candidates` with the lowest validation MSE is kept (earliest on ties).
    pub fn best_on_validation(&self, candidates: &[Pipeline], fraction: f64) -> Option<f64> {
        let mut seeds: Vec<u64> = self.rows.iter().filter(|r| r.fraction == fraction).map(|r| r.seed).collect();
        seeds.dedup();
        let mut picked = Vec::new();
        for seed in seeds {
            let best = candidates
                .iter()
                .filter_map(|p| {
                    self.rows
                        .iter()
                        .find(|r| r.fraction == fraction && r.seed == seed && r.strategy == p.name())
                })
                .fold(None::<&ReportRow>, |b, r| match b {
                    Some(b) if b.validation_mse <= r.validation_mse => Some(b),
                    _ => Some(r),
                })?;
            picked.push(best.mse);
        }
        (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64)
    }

    pub fn write_summary_json<W: Write>(&self, mut writer: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut writer, &serde_json::json!({ "summary": self.summary() }))?;
        writeln!(writer)?;
        Ok(())
    }
}

/// Runs every pipeline on every (fraction, seed) cell. Rows are ordered by
/// fraction, then seed, then [`Pipeline::ALL`].
pub fn compare_pipelines(
    task: &RegressionTask,
    fractions: &[f64],
    seeds: &[u64],
    options: &EvalOptions,
) -> Result<Report> {
    if !task.inputs.is_complete() {
        return Err(Error::IncompleteReference);
    }
    if options.components.is_empty() || options.grid.is_empty() {
        return Err(Error::InvalidConfig("need at least one component count and one kernel".into()));
    }
    let cells: Vec<(f64, u64)> = fractions.iter().flat_map(|&f| seeds.iter().map(move |&s| (f, s))).collect();
    let run = || -> Result<Vec<Vec<ReportRow>>> {
        cells.par_iter().map(|&(f, s)| run_cell(task, f, s, options)).collect()
    };
    let rows = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?
        .install(run)?;
    Ok(Report {
        rows: rows.into_iter().flatten().collect(),
    })
}

fn run_cell(task: &RegressionTask, fraction: f64, seed: u64, options: &EvalOptions) -> Result<Vec<ReportRow>> {
    let joint = task.joint();
    let p = task.inputs.d();
    let input_cols: Vec<usize> = (0..p).collect();
    let masked = mask_mcar_columns(&joint, fraction, seed, &input_cols)?;
    let norm = fit_normalizer(&masked, &task.train)?;
    let z = norm.normalize(&masked);
    let reference = norm.normalize(&joint).select_columns(&input_cols);
    let inputs = z.select_columns(&input_cols);
    let y: Vec<f64> = (0..z.n()).map(|i| z.get(i, p).expect("target is observed")).collect();

    let model = select_mixture(&z, task, seed, options)?;
    let imputed = impute_mixture(&model, &z.mask_columns(&[p]))?.filled;
    let regress: Vec<f64> = (0..imputed.n()).map(|i| imputed.get(i, p).unwrap()).collect();
    let mixture_inputs = imputed.select_columns(&input_cols);
    let train_inputs = inputs.select_rows(&task.train);

    let candidates = [
        (Pipeline::MixtureKrr, mixture_inputs),
        (Pipeline::MeanKrr, impute_global_mean(&inputs, &train_inputs)?.filled),
        (Pipeline::Knn1Krr, impute_knn_pool(&inputs, &reference, 1, &task.train)?.filled),
        (Pipeline::Knn10Krr, impute_knn_pool(&inputs, &reference, 10, &task.train)?.filled),
    ];
    let row = |pipeline: Pipeline, mse: f64, validation_mse: f64, selected: String| ReportRow {
        strategy: pipeline.name().into(),
        fraction,
        seed,
        mse,
        validation_mse,
        selected,
    };
    let mut rows = Vec::with_capacity(Pipeline::ALL.len());
    for (pipeline, filled) in candidates {
        let (test, val, spec) = krr_pipeline(&filled, &y, task, &options.grid)?;
        rows.push(row(pipeline, test, val, spec.to_string()));
    }
    rows.push(row(
        Pipeline::MixtureRegress,
        subset_mse(&regress, &y, &task.test),
        subset_mse(&regress, &y, &task.validation),
        format!("mixture(L={})", model.n_components()),
    ));
    Ok(rows)
}

fn subset_mse(pred: &[f64], y: &[f64], rows: &[usize]) -> f64 {
    rows.iter().map(|&i| (pred[i] - y[i]).powi(2)).sum::<f64>() / rows.len() as f64
}

fn to_mat(ds: &Dataset, rows: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), ds.d(), |i, j| ds.row(rows[i])[j])
}

/// Tunes on validation, refits on train, returns (test MSE, validation MSE, spec).
fn krr_pipeline(
    filled: &Dataset,
    y: &[f64],
    task: &RegressionTask,
    grid: &[KernelSpec],
) -> Result<(f64, f64, KernelSpec)> {
    let pick = |rows: &[usize]| rows.iter().map(|&i| y[i]).collect::<Vec<f64>>();
    let (xt, xv, xs) = (to_mat(filled, &task.train), to_mat(filled, &task.validation), to_mat(filled, &task.test));
    let (yt, yv, ys) = (pick(&task.train), pick(&task.validation), pick(&task.test));
    let sel = grid_select(xt.as_ref(), &yt, xv.as_ref(), &yv, grid)?;
    let model = krr_fit(xt.as_ref(), &yt, sel.best, Solver::Auto)?;
    Ok((mse(&model.predict(xs.as_ref()), &ys), sel.validation_mse, sel.best))
}

/// Fits one mixture per candidate size on the training rows (early-stopped on
/// the validation rows) and keeps the one with the highest validation log-likelihood.
fn select_mixture(z: &Dataset, task: &RegressionTask, seed: u64, options: &EvalOptions) -> Result<MixtureModel> {
    let train = z.select_rows(&task.train);
    let val = z.select_rows(&task.validation);
    let mut best: Option<(f64, MixtureModel)> = None;
    for &components in &options.components {
        if components > train.n() {
            continue;
        }
        let config = TrainConfig {
            components,
            seed,
            threads: 1,
            ..options.train.clone()
        };
        let fitted = fit_with(
            &train,
            &config,
            FitOptions {
                validation: Some(&val),
                ..FitOptions::default()
            },
        );
        let Ok((model, _)) = fitted else { continue };
        let ll = log_likelihood(&model, &val)?.mean();
        if ll.is_finite() && best.as_ref().is_none_or(|(b, _)| ll > *b) {
            best = Some((ll, model));
        }
    }
    best.map(|(_, m)| m)
        .ok_or_else(|| Error::InvalidConfig("no candidate mixture could be trained".into()))
}
