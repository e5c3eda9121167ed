//! Per-(component, pattern) matrices: the Cholesky factor of `Σ_oo` and the
//! conditional covariance `((Σ⁻¹)_mm)⁻¹` of the missing block.

use nalgebra::DMatrix;

use super::GaussianComponent;
use crate::linalg::{
    cholesky_subset, conditional_covariance_with_factor, ivl_extend, ivl_shrink, submatrix,
    BlockPartition, CholFactor,
};
use crate::patterns::MissingPattern;
use crate::Result;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Spare factor rows so that a few insertions do not reallocate.
const FACTOR_SLACK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct PatternWorkspace {
    pub pattern: usize,
    /// Factor of `Σ_oo`; row order is `factor.perm()`.
    pub factor: CholFactor,
    /// Row order of `cond_cov`.
    pub missing: Vec<usize>,
    pub cond_cov: DMatrix<f64>,
    /// Computed from scratch rather than derived from a parent.
    pub fresh: bool,
}

impl PatternWorkspace {
    /// Direct computation: factor `Σ_oo`, then the Schur complement of the missing block.
    pub fn from_scratch(component: &GaussianComponent, pattern: &MissingPattern) -> Result<Self> {
        let sigma = &component.cov;
        let capacity = (pattern.n_o() + FACTOR_SLACK).min(sigma.nrows());
        let factor = cholesky_subset(sigma, pattern.observed(), capacity)?;
        let cond_cov = conditional_covariance_with_factor(sigma, &factor, pattern.missing());
        Ok(Self {
            pattern: pattern.id,
            factor,
            missing: pattern.missing().to_vec(),
            cond_cov,
            fresh: true,
        })
    }

    pub fn log_det_observed(&self) -> f64 {
        self.factor.log_det()
    }

    /// Moves this workspace to `to`, one variable at a time.
    ///
    /// Newly missing variables are deleted from the factor and appended to the
    /// conditional covariance through the partitioned inverse of `(Σ⁻¹)_mm`;
    /// newly observed ones are appended to the factor and removed from the
    /// conditional covariance.
    pub fn advance_in_place(&mut self, to: &MissingPattern, component: &GaussianComponent) -> Result<()> {
        let d = component.dim();
        let mut currently_missing = vec![false; d];
        for &m in &self.missing {
            currently_missing[m] = true;
        }
        let newly_missing: Vec<usize> = to
            .missing()
            .iter()
            .copied()
            .filter(|&v| !currently_missing[v])
            .collect();
        let newly_observed: Vec<usize> = to
            .observed()
            .iter()
            .copied()
            .filter(|&v| currently_missing[v])
            .collect();

        for &v in &newly_missing {
            self.factor.delete_in_place(v)?;
        }
        for &v in &newly_observed {
            self.factor.insert_in_place(&component.cov, v)?;
        }

        if !newly_observed.is_empty() {
            let (keep, drop): (Vec<usize>, Vec<usize>) =
                (0..self.missing.len()).partition(|&k| to.mask.get(self.missing[k]));
            let part = BlockPartition::new(keep.clone(), drop)?;
            self.cond_cov = ivl_shrink(&self.cond_cov, &part)?;
            self.missing = keep.iter().map(|&k| self.missing[k]).collect();
        }
        if !newly_missing.is_empty() {
            let prec = &component.precision;
            let yx = submatrix(prec, &newly_missing, &self.missing);
            let yy = submatrix(prec, &newly_missing, &newly_missing);
            self.cond_cov = ivl_extend(&self.cond_cov, &yx, &yy)?;
            self.missing.extend_from_slice(&newly_missing);
        }
        self.pattern = to.id;
        self.fresh = false;
        Ok(())
    }
}

/// Workspace for `to` derived from its tree parent, or recomputed from scratch when
/// `recompute` is set or an update loses positive definiteness.
pub fn advance_workspace(
    parent: &PatternWorkspace,
    to: &MissingPattern,
    component: &GaussianComponent,
    recompute: bool,
) -> Result<PatternWorkspace> {
    let mut ws = parent.clone();
    advance_owned(&mut ws, to, component, recompute)?;
    Ok(ws)
}

pub(crate) fn advance_owned(
    ws: &mut PatternWorkspace,
    to: &MissingPattern,
    component: &GaussianComponent,
    recompute: bool,
) -> Result<()> {
    if ws.pattern == to.id && !recompute {
        return Ok(());
    }
    if recompute || ws.advance_in_place(to, component).is_err() {
        *ws = PatternWorkspace::from_scratch(component, to)?;
    }
    Ok(())
}

/// Scratch buffers for per-sample work.
#[derive(Debug, Default)]
pub(crate) struct SampleScratch {
    z: Vec<f64>,
}

/// `log N(x_o; μ_o, Σ_oo)` for a full row (missing slots are ignored).
pub fn log_density_observed(component: &GaussianComponent, ws: &PatternWorkspace, row: &[f64]) -> f64 {
    let mut scratch = SampleScratch::default();
    let log_det = ws.log_det_observed();
    sample_stats(component, ws, log_det, row, &mut scratch, None)
}

/// Row with missing coordinates replaced by `μ_m + Σ_mo Σ_oo⁻¹ (x_o − μ_o)`.
pub fn impute_for_component(component: &GaussianComponent, ws: &PatternWorkspace, row: &[f64]) -> Vec<f64> {
    let mut scratch = SampleScratch::default();
    let mut out = row.to_vec();
    let log_det = ws.log_det_observed();
    sample_stats(component, ws, log_det, row, &mut scratch, Some(&mut out));
    out
}

/// Returns the observed log-density and optionally writes the filled row.
pub(crate) fn sample_stats(
    component: &GaussianComponent,
    ws: &PatternWorkspace,
    log_det: f64,
    row: &[f64],
    scratch: &mut SampleScratch,
    filled: Option<&mut [f64]>,
) -> f64 {
    let perm = ws.factor.perm();
    let no = perm.len();
    let mean = component.mean.as_slice();
    scratch.z.clear();
    scratch.z.extend(perm.iter().map(|&o| row[o] - mean[o]));
    let z = &mut scratch.z;
    ws.factor.forward_solve_in_place(z);
    let quad: f64 = z.iter().map(|w| w * w).sum();
    let log_q = if no == 0 {
        0.0
    } else {
        -0.5 * (no as f64 * LN_2PI + log_det + quad)
    };
    if let Some(out) = filled {
        ws.factor.backward_solve_in_place(z);
        let d = component.cov.nrows();
        let cov = component.cov.as_slice();
        for &m in &ws.missing {
            // Column `m` of the symmetric covariance holds row `m`.
            let col = &cov[m * d..(m + 1) * d];
            let mut v = mean[m];
            for (&o, &u) in perm.iter().zip(z.iter()) {
                v += col[o] * u;
            }
            out[m] = v;
        }
        for &o in perm {
            out[o] = row[o];
        }
    }
    log_q
}
