//! Mixture of full-covariance Gaussians trained by EM on incomplete data.
//!
//! Two engines compute the per-pattern matrices:
//!
//! * [`Engine::Naive`] factors `Σ_oo` and forms the conditional covariance of the
//!   missing block from scratch for every missing pattern;
//! * [`Engine::Fast`] walks the pattern spanning tree and derives each pattern's
//!   matrices from its parent's with Cholesky row/column updates and
//!   partitioned-inverse updates, recomputing from scratch at the roots and at
//!   every `k`-th depth.
//!
//! Everything downstream of the workspaces (densities, fill-in, M-step) is
//! shared, so the engines agree up to rounding.

mod em;
mod kmeans;
mod regularize;
mod workspace;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{cholesky, symmetrize};
use crate::patterns::{DEFAULT_MAX_GRAPH, DEFAULT_RECOMPUTE_EVERY};
use crate::{Error, Result};

pub use em::{
    e_step, fit, fit_with, log_likelihood, m_step, posterior_fill, verify_workspaces, FitOptions,
    IterationRecord, LogLikelihood, Responsibilities, StopReason, TrainingTrace,
    DEGENERATE_WEIGHT_FRACTION,
};
pub use kmeans::kmeans_init;
pub use regularize::regularize;
pub use workspace::{
    advance_workspace, impute_for_component, log_density_observed, PatternWorkspace,
};

/// How per-pattern matrices are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Naive,
    Fast,
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Engine::Naive),
            "fast" => Ok(Engine::Fast),
            other => Err(Error::InvalidConfig(format!("unknown engine {other:?}"))),
        }
    }
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Engine::Naive => "naive",
            Engine::Fast => "fast",
        })
    }
}

/// Training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Number of mixture components.
    pub components: usize,
    pub max_iters: usize,
    /// Stop when the relative improvement of the mean training log-likelihood
    /// falls below this value. Non-positive disables the check.
    pub rel_ll_tolerance: f64,
    /// Diagonal jitter added to every covariance.
    pub ridge: f64,
    /// Fraction of principal components kept, in `(0, 1]`.
    pub pc_fraction: f64,
    pub seed: u64,
    pub engine: Engine,
    /// Recompute workspaces from scratch at tree depths that are multiples of this.
    /// `None` only recomputes at roots.
    pub recompute_every: Option<usize>,
    pub kmeans_iters: usize,
    /// Largest pattern count handled by a single spanning tree.
    pub max_graph: usize,
    /// Keep mixing weights equal instead of re-estimating them.
    pub fix_weights: bool,
    /// Worker threads for per-component passes. Not part of the model.
    #[serde(skip)]
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            components: 1,
            max_iters: 100,
            rel_ll_tolerance: 1e-6,
            ridge: 1e-4,
            pc_fraction: 1.0,
            seed: 0,
            engine: Engine::Fast,
            recompute_every: Some(DEFAULT_RECOMPUTE_EVERY),
            kmeans_iters: 20,
            max_graph: DEFAULT_MAX_GRAPH,
            fix_weights: false,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.components == 0 {
            return bad("components must be at least 1".into());
        }
        if !(self.pc_fraction > 0.0 && self.pc_fraction <= 1.0) {
            return bad(format!("pc_fraction {} must lie in (0, 1]", self.pc_fraction));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return bad(format!("ridge {} must be a finite non-negative number", self.ridge));
        }
        if self.rel_ll_tolerance.is_nan() {
            return bad("rel_ll_tolerance is NaN".into());
        }
        if self.recompute_every == Some(0) {
            return bad("recompute_every must be positive".into());
        }
        if self.max_graph == 0 {
            return bad("max_graph must be positive".into());
        }
        Ok(())
    }
}

/// One mixture component with cached precision and log-determinant.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    pub log_det: f64,
    pub log_weight: f64,
}

impl GaussianComponent {
    pub fn new(mean: DVector<f64>, mut cov: DMatrix<f64>, log_weight: f64) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        symmetrize(&mut cov);
        let f = cholesky(&cov)?;
        Ok(Self {
            precision: f.inverse(),
            log_det: f.log_det(),
            mean,
            cov,
            log_weight,
        })
    }

    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// A trained (or initialized) mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub components: Vec<GaussianComponent>,
    pub config: TrainConfig,
    /// Mean training log-likelihood after each EM iteration.
    pub trace: Vec<f64>,
}

impl MixtureModel {
    pub fn new(components: Vec<GaussianComponent>, config: TrainConfig) -> Result<Self> {
        let d = components.first().map(GaussianComponent::dim).ok_or_else(|| {
            Error::InvalidConfig("a mixture needs at least one component".into())
        })?;
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: c.dim(),
            });
        }
        Ok(Self {
            components,
            config,
            trace: Vec::new(),
        })
    }

    pub fn d(&self) -> usize {
        self.components[0].dim()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(GaussianComponent::weight).collect()
    }

    /// Mixture mean `Σ_j π_j μ_j`.
    pub fn mean(&self) -> DVector<f64> {
        self.components
            .iter()
            .fold(DVector::zeros(self.d()), |acc, c| acc + &c.mean * c.weight())
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            d: self.d(),
            components: self.n_components(),
            weights: self.weights(),
            means: self.components.iter().map(|c| c.mean.as_slice().to_vec()).collect(),
            covariances: self
                .components
                .iter()
                .map(|c| {
                    let d = c.dim();
                    (0..d).flat_map(|i| (0..=i).map(move |j| (i, j))).map(|(i, j)| c.cov[(i, j)]).collect()
                })
                .collect(),
            config: self.config.clone(),
            trace: self.trace.clone(),
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        if doc.format != MODEL_FORMAT {
            return Err(Error::Serde(format!("unexpected format {:?}", doc.format)));
        }
        let d = doc.d;
        let l = doc.components;
        if doc.weights.len() != l || doc.means.len() != l || doc.covariances.len() != l {
            return Err(Error::Serde(format!("document does not describe {l} components")));
        }
        let mut comps = Vec::with_capacity(l);
        for j in 0..l {
            if doc.means[j].len() != d || doc.covariances[j].len() != d * (d + 1) / 2 {
                return Err(Error::Serde(format!("component {j} has the wrong size")));
            }
            let mut cov = DMatrix::zeros(d, d);
            let mut k = 0;
            for i in 0..d {
                for jj in 0..=i {
                    cov[(i, jj)] = doc.covariances[j][k];
                    cov[(jj, i)] = doc.covariances[j][k];
                    k += 1;
                }
            }
            let comp = GaussianComponent::new(
                DVector::from_vec(doc.means[j].clone()),
                cov,
                doc.weights[j].ln(),
            )
            .map_err(|e| Error::Numerical {
                component: j,
                pattern: None,
                source: Box::new(e),
            })?;
            comps.push(comp);
        }
        let mut model = MixtureModel::new(comps, doc.config)?;
        model.trace = doc.trace;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(s)?)
    }
}

pub const MODEL_FORMAT: &str = "fastem-mixture";
pub const MODEL_VERSION: u32 = 1;

/// Serialized form of a [`MixtureModel`]. Covariances are stored as the
/// row-major lower triangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub d: usize,
    #[serde(rename = "L")]
    pub components: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
    pub config: TrainConfig,
    pub trace: Vec<f64>,
}
