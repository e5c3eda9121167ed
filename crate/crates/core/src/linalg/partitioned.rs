//! Partitioned-inverse updates (inverse variance lemma) and conditional covariances.
//!
//! For a symmetric positive definite `Λ` split into blocks `X` and `Y`:
//!
//! ```text
//! B       = Λ_YX Λ_XX⁻¹
//! Λ_{Y|X} = Λ_YY − Λ_YX Λ_XX⁻¹ Λ_XY
//! Λ⁻¹     = [ Λ_XX⁻¹ + Bᵀ Λ_{Y|X}⁻¹ B    −Bᵀ Λ_{Y|X}⁻¹ ]
//!           [ −Λ_{Y|X}⁻¹ B                 Λ_{Y|X}⁻¹    ]
//! ```
//!
//! Going the other way, `(Λ⁻¹)_XX − (Λ⁻¹)_XY (Λ⁻¹)_YY⁻¹ (Λ⁻¹)_YX = Λ_XX⁻¹`.

use nalgebra::DMatrix;

use super::{cholesky, cholesky_subset, submatrix, symmetrize, CholFactor};
use crate::{Error, Result};

/// Disjoint split of `0..dim` into a retained block `x` and a block `y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    x: Vec<usize>,
    y: Vec<usize>,
}

impl BlockPartition {
    pub fn new(x: Vec<usize>, y: Vec<usize>) -> Result<Self> {
        let dim = x.len() + y.len();
        let mut seen = vec![false; dim];
        for &i in x.iter().chain(&y) {
            if i >= dim || seen[i] {
                return Err(Error::ShapeMismatch(format!(
                    "partition index {i} is duplicated or out of range for dimension {dim}"
                )));
            }
            seen[i] = true;
        }
        Ok(Self { x, y })
    }

    /// Partition keeping everything except `y`, in ascending order.
    pub fn removing(dim: usize, y: Vec<usize>) -> Result<Self> {
        let x = (0..dim).filter(|i| !y.contains(i)).collect();
        Self::new(x, y)
    }

    pub fn x(&self) -> &[usize] {
        &self.x
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn dim(&self) -> usize {
        self.x.len() + self.y.len()
    }
}

/// Assembles `Λ⁻¹` (rows ordered `X` then `Y`) from `Λ_XX⁻¹` and the `Y` rows of `Λ`.
///
/// Cost is `O(|Y|·|X|²)` for small `|Y|`.
pub fn ivl_extend(
    lambda_xx_inv: &DMatrix<f64>,
    lambda_yx: &DMatrix<f64>,
    lambda_yy: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let nx = lambda_xx_inv.nrows();
    let ny = lambda_yy.nrows();
    if lambda_yx.nrows() != ny || lambda_yx.ncols() != nx {
        return Err(Error::DimensionMismatch {
            expected: ny * nx,
            got: lambda_yx.nrows() * lambda_yx.ncols(),
        });
    }
    let b = lambda_yx * lambda_xx_inv;
    let mut cond = lambda_yy - &b * lambda_yx.transpose();
    symmetrize(&mut cond);
    let cond_inv = cholesky(&cond)?.inverse();
    let g = &cond_inv * &b;

    let mut out = DMatrix::zeros(nx + ny, nx + ny);
    let mut tl = lambda_xx_inv + b.transpose() * &g;
    symmetrize(&mut tl);
    out.view_mut((0, 0), (nx, nx)).copy_from(&tl);
    for i in 0..ny {
        for j in 0..nx {
            out[(nx + i, j)] = -g[(i, j)];
            out[(j, nx + i)] = -g[(i, j)];
        }
    }
    out.view_mut((nx, nx), (ny, ny)).copy_from(&cond_inv);
    Ok(out)
}

/// Recovers `Λ_XX⁻¹` from the full inverse `Λ⁻¹`, rows in `part.x()` order.
pub fn ivl_shrink(lambda_inv: &DMatrix<f64>, part: &BlockPartition) -> Result<DMatrix<f64>> {
    if lambda_inv.nrows() != part.dim() {
        return Err(Error::DimensionMismatch {
            expected: part.dim(),
            got: lambda_inv.nrows(),
        });
    }
    let mut xx = submatrix(lambda_inv, &part.x, &part.x);
    if part.y.is_empty() {
        return Ok(xx);
    }
    let fy = cholesky_subset(lambda_inv, &part.y, part.y.len())?;
    // V = L_Y⁻¹ (Λ⁻¹)_YX, then subtract VᵀV.
    let nx = part.x.len();
    let ny = part.y.len();
    let mut v = DMatrix::zeros(ny, nx);
    let mut col = vec![0.0; ny];
    for (j, &xj) in part.x.iter().enumerate() {
        for (c, &yi) in col.iter_mut().zip(&part.y) {
            *c = lambda_inv[(yi, xj)];
        }
        fy.forward_solve_in_place(&mut col);
        v.column_mut(j).copy_from_slice(&col);
    }
    xx -= v.transpose() * &v;
    symmetrize(&mut xx);
    Ok(xx)
}

/// `Σ_mm − Σ_mo Σ_oo⁻¹ Σ_om` computed directly, rows in `missing` order.
pub fn conditional_covariance(sigma: &DMatrix<f64>, missing: &[usize]) -> Result<DMatrix<f64>> {
    let d = sigma.nrows();
    let mut is_missing = vec![false; d];
    for &m in missing {
        if m >= d {
            return Err(Error::DimensionMismatch { expected: d, got: m });
        }
        is_missing[m] = true;
    }
    let observed: Vec<usize> = (0..d).filter(|&i| !is_missing[i]).collect();
    let factor = cholesky_subset(sigma, &observed, observed.len())?;
    Ok(conditional_covariance_with_factor(sigma, &factor, missing))
}

/// Same as [`conditional_covariance`] reusing a factor of `Σ_oo` (any row order).
pub fn conditional_covariance_with_factor(
    sigma: &DMatrix<f64>,
    factor: &CholFactor,
    missing: &[usize],
) -> DMatrix<f64> {
    let mut out = submatrix(sigma, missing, missing);
    let no = factor.dim();
    if no == 0 || missing.is_empty() {
        return out;
    }
    let nm = missing.len();
    let mut v = DMatrix::zeros(no, nm);
    let mut col = vec![0.0; no];
    for (j, &mj) in missing.iter().enumerate() {
        for (c, &o) in col.iter_mut().zip(factor.perm()) {
            *c = sigma[(o, mj)];
        }
        factor.forward_solve_in_place(&mut col);
        v.column_mut(j).copy_from_slice(&col);
    }
    out -= v.transpose() * &v;
    symmetrize(&mut out);
    out
}
