//! Dense symmetric kernels used by the EM engines.
//!
//! Matrices are `nalgebra::DMatrix<f64>`. The Cholesky factor keeps its own
//! row-major storage because the pattern-tree walk grows and shrinks it one
//! row at a time.

mod cholesky;
mod partitioned;

pub use cholesky::{chol_delete, chol_insert, cholesky, cholesky_subset, solve_lower, CholFactor};
pub use partitioned::{
    conditional_covariance, conditional_covariance_with_factor, ivl_extend, ivl_shrink,
    BlockPartition,
};

use nalgebra::DMatrix;

/// Relative pivot threshold below which a matrix is treated as not positive definite.
pub const PD_RELATIVE_TOLERANCE: f64 = 1e-12;

pub type SymMatrix = DMatrix<f64>;

/// Gathers `m[rows, cols]`.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Averages `m` with its transpose in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Inverse of a symmetric positive definite matrix through its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>) -> crate::Result<DMatrix<f64>> {
    Ok(cholesky(m)?.inverse())
}

/// `‖a − b‖_F / max(‖b‖_F, tiny)`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale > f64::MIN_POSITIVE {
        diff / scale
    } else {
        diff
    }
}
