use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::Serialize;

use super::workspace::{advance_owned, sample_stats, SampleScratch};
use super::{kmeans_init, regularize, Engine, GaussianComponent, MixtureModel, PatternWorkspace, TrainConfig};
use crate::linalg::{conditional_covariance, relative_frobenius, symmetrize};
use crate::patterns::{extract_patterns, PatternPlan, ScheduleBlock};
use crate::{Dataset, Error, Result};

/// A component whose total responsibility falls below this fraction of `n` is reinitialized.
pub const DEGENERATE_WEIGHT_FRACTION: f64 = 1e-10;

/// Posterior component probabilities and per-component observed log-densities.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    /// `n × L`, rows sum to one.
    pub p: DMatrix<f64>,
    /// `n × L`, `log q_ij`.
    pub log_q: DMatrix<f64>,
    /// `log Σ_j π_j q_ij` per sample.
    pub log_mix: Vec<f64>,
}

impl Responsibilities {
    pub fn log_likelihood(&self) -> LogLikelihood {
        LogLikelihood {
            total: self.log_mix.iter().sum(),
            n: self.log_mix.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogLikelihood {
    pub total: f64,
    pub n: usize,
}

impl LogLikelihood {
    /// Per-sample average; zero for an empty dataset.
    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.total / self.n as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    Converged,
    ValidationIncrease,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean training log-likelihood of the parameters produced by this iteration.
    pub log_likelihood: f64,
    pub validation_log_likelihood: Option<f64>,
    pub m_step_ms: f64,
    pub e_step_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingTrace {
    pub patterns: usize,
    pub tree_weight: usize,
    pub initial_log_likelihood: f64,
    pub iterations: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    pub pattern_ms: f64,
    pub mst_ms: f64,
    pub init_ms: f64,
    pub total_ms: f64,
}

/// Optional extras for [`fit_with`].
#[derive(Default)]
pub struct FitOptions<'a> {
    /// Stop when the mean log-likelihood of this dataset decreases; the previous model is kept.
    pub validation: Option<&'a Dataset>,
    /// Starting point instead of k-means.
    pub initial: Option<MixtureModel>,
    /// Called with `(0, initial)` and then `(t, model after iteration t)`.
    pub observer: Option<&'a mut dyn FnMut(usize, &MixtureModel)>,
}

/// Trains a mixture: patterns, spanning trees, k-means initialization, then EM.
pub fn fit(dataset: &Dataset, config: &TrainConfig) -> Result<(MixtureModel, TrainingTrace)> {
    fit_with(dataset, config, FitOptions::default())
}

pub fn fit_with(
    dataset: &Dataset,
    config: &TrainConfig,
    mut options: FitOptions<'_>,
) -> Result<(MixtureModel, TrainingTrace)> {
    config.validate()?;
    if dataset.d() == 0 {
        return Err(Error::InvalidConfig("dataset has no columns".into()));
    }
    if dataset.n() < config.components {
        return Err(Error::InvalidConfig(format!(
            "{} components need at least as many samples, got {}",
            config.components,
            dataset.n()
        )));
    }
    if let Some(v) = options.validation {
        if v.d() != dataset.d() {
            return Err(Error::DimensionMismatch {
                expected: dataset.d(),
                got: v.d(),
            });
        }
    }
    let start = Instant::now();
    let pool = thread_pool(config.threads)?;
    let pool = pool.as_ref();

    let t = Instant::now();
    let patterns = extract_patterns(dataset);
    let pattern_ms = ms(t);
    let t = Instant::now();
    let plan = PatternPlan::from_patterns(dataset.n(), patterns, config.max_graph, config.recompute_every);
    let mst_ms = ms(t);
    let val_plan = options
        .validation
        .map(|v| PatternPlan::build(v, config.max_graph, config.recompute_every));

    let t = Instant::now();
    let mut model = match options.initial.take() {
        Some(m) => {
            if m.d() != dataset.d() {
                return Err(Error::DimensionMismatch {
                    expected: dataset.d(),
                    got: m.d(),
                });
            }
            MixtureModel {
                config: config.clone(),
                trace: Vec::new(),
                ..m
            }
        }
        None => kmeans_init(dataset, config)?,
    };
    let init_ms = ms(t);
    if let Some(obs) = options.observer.as_mut() {
        obs(0, &model);
    }

    let mut passes = run_passes(&model, dataset, &plan, config.engine, true, pool)?;
    let mut resp = responsibilities(&model, &passes);
    let initial_ll = resp.log_likelihood().mean();
    let mut prev_ll = initial_ll;
    let mut prev_val = match (options.validation, &val_plan) {
        (Some(v), Some(vp)) => Some(validation_ll(&model, v, vp, config.engine, pool)?),
        _ => None,
    };

    let mut iterations = Vec::new();
    let mut stop_reason = StopReason::MaxIterations;
    for it in 1..=config.max_iters {
        let t = Instant::now();
        let next = m_step_from(&model, dataset, &plan, &passes, &resp, pool)?;
        let m_step_ms = ms(t);

        let t = Instant::now();
        passes = run_passes(&next, dataset, &plan, config.engine, true, pool)?;
        resp = responsibilities(&next, &passes);
        let ll = resp.log_likelihood().mean();
        let val = match (options.validation, &val_plan) {
            (Some(v), Some(vp)) => Some(validation_ll(&next, v, vp, config.engine, pool)?),
            _ => None,
        };
        let e_step_ms = ms(t);
        iterations.push(IterationRecord {
            iteration: it,
            log_likelihood: ll,
            validation_log_likelihood: val,
            m_step_ms,
            e_step_ms,
        });

        if let (Some(v), Some(pv)) = (val, prev_val) {
            if v < pv {
                stop_reason = StopReason::ValidationIncrease;
                break;
            }
        }
        let mut next = next;
        next.trace = model.trace.clone();
        next.trace.push(ll);
        model = next;
        if let Some(obs) = options.observer.as_mut() {
            obs(it, &model);
        }
        prev_val = val;
        let converged = config.rel_ll_tolerance > 0.0
            && (ll - prev_ll) / prev_ll.abs().max(f64::MIN_POSITIVE) < config.rel_ll_tolerance;
        prev_ll = ll;
        if converged {
            stop_reason = StopReason::Converged;
            break;
        }
    }

    let trace = TrainingTrace {
        patterns: plan.patterns.len(),
        tree_weight: plan.total_weight(),
        initial_log_likelihood: initial_ll,
        iterations,
        stop_reason,
        pattern_ms,
        mst_ms,
        init_ms,
        total_ms: ms(start),
    };
    Ok((model, trace))
}

/// Responsibilities of every sample under `model`.
pub fn e_step(model: &MixtureModel, dataset: &Dataset, plan: &PatternPlan, engine: Engine) -> Result<Responsibilities> {
    check_dim(model, dataset)?;
    let passes = run_passes(model, dataset, plan, engine, false, None)?;
    Ok(responsibilities(model, &passes))
}

/// One maximization step given responsibilities computed under `model`.
pub fn m_step(
    model: &MixtureModel,
    dataset: &Dataset,
    resp: &Responsibilities,
    plan: &PatternPlan,
    engine: Engine,
) -> Result<MixtureModel> {
    check_dim(model, dataset)?;
    if resp.p.nrows() != dataset.n() || resp.p.ncols() != model.n_components() {
        return Err(Error::ShapeMismatch(format!(
            "responsibilities are {}x{}, expected {}x{}",
            resp.p.nrows(),
            resp.p.ncols(),
            dataset.n(),
            model.n_components()
        )));
    }
    let passes = run_passes(model, dataset, plan, engine, true, None)?;
    m_step_from(model, dataset, plan, &passes, resp, None)
}

/// Observed-data log-likelihood of `dataset` under `model`.
pub fn log_likelihood(model: &MixtureModel, dataset: &Dataset) -> Result<LogLikelihood> {
    check_dim(model, dataset)?;
    let plan = PatternPlan::build(dataset, model.config.max_graph, model.config.recompute_every);
    Ok(e_step(model, dataset, &plan, Engine::Fast)?.log_likelihood())
}

/// Row-major `n × d` values where missing cells hold `Σ_j p_ij x̂^{i,j}_m`.
pub fn posterior_fill(model: &MixtureModel, dataset: &Dataset) -> Result<(Vec<f64>, Responsibilities)> {
    check_dim(model, dataset)?;
    let plan = PatternPlan::build(dataset, model.config.max_graph, model.config.recompute_every);
    let passes = run_passes(model, dataset, &plan, Engine::Fast, true, None)?;
    let resp = responsibilities(model, &passes);
    let (n, d) = (dataset.n(), dataset.d());
    let mut out = dataset.values().to_vec();
    for i in 0..n {
        for c in 0..d {
            if dataset.is_missing(i, c) {
                out[i * d + c] = passes
                    .iter()
                    .enumerate()
                    .map(|(j, p)| resp.p[(i, j)] * p.filled[i * d + c])
                    .sum();
            }
        }
    }
    Ok((out, resp))
}

/// Walks every component's pattern schedule with the fast engine and returns the
/// largest relative Frobenius error between a chained conditional covariance
/// and `Σ_mm − Σ_mo Σ_oo⁻¹ Σ_om` computed directly.
pub fn verify_workspaces(model: &MixtureModel, plan: &PatternPlan) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (j, comp) in model.components.iter().enumerate() {
        walk(comp, j, plan, Engine::Fast, |_, ws| {
            if !ws.missing.is_empty() {
                let direct = conditional_covariance(&comp.cov, &ws.missing)?;
                worst = worst.max(relative_frobenius(&ws.cond_cov, &direct));
            }
            Ok(())
        })?;
    }
    Ok(worst)
}

struct ComponentPass {
    log_q: Vec<f64>,
    /// Row-major `n × d`; empty when fill-in was not requested.
    filled: Vec<f64>,
    /// Conditional covariance per pattern with its row order.
    cond: Vec<Option<(Vec<usize>, DMatrix<f64>)>>,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn check_dim(model: &MixtureModel, dataset: &Dataset) -> Result<()> {
    if model.d() != dataset.d() {
        return Err(Error::DimensionMismatch {
            expected: model.d(),
            got: dataset.d(),
        });
    }
    Ok(())
}

fn thread_pool(threads: usize) -> Result<Option<ThreadPool>> {
    if threads <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

fn per_component<T: Send>(l: usize, pool: Option<&ThreadPool>, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    match pool {
        Some(p) => p.install(|| (0..l).into_par_iter().map(&f).collect()),
        None => (0..l).map(f).collect(),
    }
}

fn numerical(component: usize, pattern: Option<usize>) -> impl FnOnce(Error) -> Error {
    move |e| Error::Numerical {
        component,
        pattern,
        source: Box::new(e),
    }
}

/// Visits every schedule block with a workspace for its pattern. The fast engine
/// keeps ancestors with unvisited children on a stack and hands the parent's
/// workspace to its last child without copying; the naive engine starts over each time.
fn walk(
    comp: &GaussianComponent,
    j: usize,
    plan: &PatternPlan,
    engine: Engine,
    mut visit: impl FnMut(&ScheduleBlock, &PatternWorkspace) -> Result<()>,
) -> Result<()> {
    let blocks = &plan.schedule.blocks;
    if engine == Engine::Naive {
        for block in blocks {
            let pattern = &plan.patterns[block.pattern];
            let ws = PatternWorkspace::from_scratch(comp, pattern).map_err(numerical(j, Some(pattern.id)))?;
            visit(block, &ws)?;
        }
        return Ok(());
    }
    let mut remaining = vec![0usize; plan.patterns.len()];
    for b in blocks {
        if let Some(p) = b.parent {
            remaining[p] += 1;
        }
    }
    let mut stack: Vec<PatternWorkspace> = Vec::new();
    for block in blocks {
        let pattern = &plan.patterns[block.pattern];
        let inherited = match block.parent {
            Some(parent) => {
                while stack.last().is_some_and(|w| w.pattern != parent) {
                    stack.pop();
                }
                remaining[parent] -= 1;
                let last_child = remaining[parent] == 0;
                match (block.recompute, last_child) {
                    (true, true) => {
                        stack.pop();
                        None
                    }
                    (true, false) => None,
                    (false, true) => stack.pop(),
                    (false, false) => stack.last().cloned(),
                }
            }
            None => {
                stack.clear();
                None
            }
        };
        let ws = match inherited {
            Some(mut ws) => {
                advance_owned(&mut ws, pattern, comp, false).map_err(numerical(j, Some(pattern.id)))?;
                ws
            }
            None => PatternWorkspace::from_scratch(comp, pattern).map_err(numerical(j, Some(pattern.id)))?,
        };
        visit(block, &ws)?;
        if remaining[block.pattern] > 0 {
            stack.push(ws);
        }
    }
    Ok(())
}

fn component_pass(
    comp: &GaussianComponent,
    j: usize,
    dataset: &Dataset,
    plan: &PatternPlan,
    engine: Engine,
    want_filled: bool,
) -> Result<ComponentPass> {
    let (n, d) = (dataset.n(), dataset.d());
    let mut log_q = vec![0.0; n];
    let mut filled = if want_filled { vec![0.0; n * d] } else { Vec::new() };
    let mut cond = vec![None; plan.patterns.len()];
    let mut scratch = SampleScratch::default();
    walk(comp, j, plan, engine, |block, ws| {
        let log_det = ws.log_det_observed();
        for &s in plan.schedule.samples(block) {
            let row = dataset.row(s);
            let out = if want_filled {
                Some(&mut filled[s * d..(s + 1) * d])
            } else {
                None
            };
            log_q[s] = sample_stats(comp, ws, log_det, row, &mut scratch, out);
        }
        if want_filled && !ws.missing.is_empty() {
            cond[block.pattern] = Some((ws.missing.clone(), ws.cond_cov.clone()));
        }
        Ok(())
    })?;
    Ok(ComponentPass { log_q, filled, cond })
}

fn run_passes(
    model: &MixtureModel,
    dataset: &Dataset,
    plan: &PatternPlan,
    engine: Engine,
    want_filled: bool,
    pool: Option<&ThreadPool>,
) -> Result<Vec<ComponentPass>> {
    per_component(model.n_components(), pool, |j| {
        component_pass(&model.components[j], j, dataset, plan, engine, want_filled)
    })
    .into_iter()
    .collect()
}

fn validation_ll(
    model: &MixtureModel,
    dataset: &Dataset,
    plan: &PatternPlan,
    engine: Engine,
    pool: Option<&ThreadPool>,
) -> Result<f64> {
    let passes = run_passes(model, dataset, plan, engine, false, pool)?;
    Ok(responsibilities(model, &passes).log_likelihood().mean())
}

/// Log-sum-exp normalization of `log π_j + log q_ij`.
fn responsibilities(model: &MixtureModel, passes: &[ComponentPass]) -> Responsibilities {
    let l = model.n_components();
    let n = passes.first().map_or(0, |p| p.log_q.len());
    let mut p = DMatrix::zeros(n, l);
    let mut log_q = DMatrix::zeros(n, l);
    let mut log_mix = vec![0.0; n];
    let mut a = vec![0.0; l];
    for i in 0..n {
        for j in 0..l {
            log_q[(i, j)] = passes[j].log_q[i];
            a[j] = model.components[j].log_weight + passes[j].log_q[i];
        }
        let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = a.iter().map(|v| (v - m).exp()).sum();
        log_mix[i] = m + s.ln();
        let mut row_sum = 0.0;
        for j in 0..l {
            let v = (a[j] - log_mix[i]).exp();
            p[(i, j)] = v;
            row_sum += v;
        }
        for j in 0..l {
            p[(i, j)] /= row_sum;
        }
    }
    Responsibilities { p, log_q, log_mix }
}

struct ComponentUpdate {
    weight_sum: f64,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

/// Weighted mean, weighted scatter of the filled samples, plus the
/// responsibility-weighted conditional covariances of the missing blocks.
fn accumulate(
    j: usize,
    dataset: &Dataset,
    plan: &PatternPlan,
    pass: &ComponentPass,
    resp: &Responsibilities,
) -> Option<ComponentUpdate> {
    let (n, d) = (dataset.n(), dataset.d());
    let pj = resp.p.column(j);
    let w: f64 = pj.sum();
    if !(w >= DEGENERATE_WEIGHT_FRACTION * n as f64) {
        return None;
    }
    let mut mean = DVector::zeros(d);
    for (row, &pi) in pass.filled.chunks_exact(d).zip(pj.iter()) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += pi * x;
        }
    }
    mean /= w;
    // Rows of `yt` are the columns of sqrt(p)·(x̂ − μ); the scatter is one GEMM.
    let mut yt = DMatrix::zeros(d, n);
    for (i, (row, &pi)) in pass.filled.chunks_exact(d).zip(pj.iter()).enumerate() {
        let sp = pi.sqrt();
        let out = &mut yt.as_mut_slice()[i * d..(i + 1) * d];
        for ((o, &x), &m) in out.iter_mut().zip(row).zip(mean.iter()) {
            *o = sp * (x - m);
        }
    }
    let mut cov = &yt * yt.transpose() / w;
    let cs = cov.as_mut_slice();
    for pattern in &plan.patterns {
        if let Some((missing, cc)) = &pass.cond[pattern.id] {
            let wp: f64 = pattern.sample_ids.iter().map(|&i| pj[i]).sum::<f64>() / w;
            let k = missing.len();
            let cc = cc.as_slice();
            for (b, &mb) in missing.iter().enumerate() {
                for (a, &ma) in missing.iter().enumerate() {
                    cs[mb * d + ma] += wp * cc[b * k + a];
                }
            }
        }
    }
    symmetrize(&mut cov);
    Some(ComponentUpdate {
        weight_sum: w,
        mean,
        cov,
    })
}

fn m_step_from(
    model: &MixtureModel,
    dataset: &Dataset,
    plan: &PatternPlan,
    passes: &[ComponentPass],
    resp: &Responsibilities,
    pool: Option<&ThreadPool>,
) -> Result<MixtureModel> {
    let cfg = &model.config;
    let (n, l) = (dataset.n(), model.n_components());
    let updates = per_component(l, pool, |j| accumulate(j, dataset, plan, &passes[j], resp));

    // Degenerate components restart at the worst-explained samples, in order.
    let mut worst: Vec<usize> = (0..n).collect();
    worst.sort_by(|&a, &b| resp.log_mix[a].total_cmp(&resp.log_mix[b]).then(a.cmp(&b)));
    let mut worst = worst.into_iter();
    let mixture_mean = model.mean();
    let pooled = model
        .components
        .iter()
        .fold(DMatrix::zeros(model.d(), model.d()), |acc, c| acc + &c.cov * c.weight());

    let mut raw = Vec::with_capacity(l);
    for (j, u) in updates.into_iter().enumerate() {
        let (mean, cov, weight) = match u {
            Some(u) => {
                let cov = regularize(&u.cov, cfg.ridge, cfg.pc_fraction);
                (u.mean, cov, u.weight_sum / n as f64)
            }
            None => {
                let i = worst.next().unwrap_or(0);
                let mean = DVector::from_fn(model.d(), |c, _| dataset.get(i, c).unwrap_or(mixture_mean[c]));
                let _ = j;
                (mean, pooled.clone(), 1.0 / n as f64)
            }
        };
        raw.push((mean, cov, weight));
    }
    let total: f64 = raw.iter().map(|r| r.2).sum();
    let mut components = Vec::with_capacity(l);
    for (j, (mean, cov, weight)) in raw.into_iter().enumerate() {
        let log_weight = if cfg.fix_weights {
            -(l as f64).ln()
        } else {
            (weight / total).ln()
        };
        components.push(GaussianComponent::new(mean, cov, log_weight).map_err(numerical(j, None))?);
    }
    Ok(MixtureModel {
        components,
        config: cfg.clone(),
        trace: model.trace.clone(),
    })
}
