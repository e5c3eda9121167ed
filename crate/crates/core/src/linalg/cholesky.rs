use nalgebra::{DMatrix, DVector};

use super::PD_RELATIVE_TOLERANCE;
use crate::{Error, Result};

/// Lower-triangular Cholesky factor of a principal sub-matrix.
///
/// Factor row `k` corresponds to source variable `perm[k]`. Inserted variables
/// are always appended as the trailing row, so `perm` is generally not sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct CholFactor {
    dim: usize,
    stride: usize,
    data: Vec<f64>,
    perm: Vec<usize>,
}

impl CholFactor {
    /// An empty factor with room for `capacity` rows before reallocating.
    pub fn empty(capacity: usize) -> Self {
        Self {
            dim: 0,
            stride: capacity,
            data: vec![0.0; capacity * capacity],
            perm: Vec::with_capacity(capacity),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Source variable index of every factor row.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.stride + j]
    }

    /// Row `i` of the factor up to and including the diagonal.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.stride..i * self.stride + i + 1]
    }

    /// Dense copy of the lower-triangular factor.
    pub fn lower(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| if j <= i { self.get(i, j) } else { 0.0 })
    }

    /// `L Lᵀ`, the factored matrix in factor order.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let l = self.lower();
        &l * l.transpose()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim).map(|i| self.get(i, i).ln()).sum::<f64>()
    }

    /// Forward substitution `L w = z` in place, `z` in factor order.
    pub fn forward_solve_in_place(&self, z: &mut [f64]) {
        debug_assert_eq!(z.len(), self.dim);
        for i in 0..self.dim {
            let row = self.row(i);
            let mut acc = z[i];
            for (l, w) in row[..i].iter().zip(&z[..i]) {
                acc -= l * w;
            }
            z[i] = acc / row[i];
        }
    }

    /// Back substitution `Lᵀ u = w` in place, `w` in factor order.
    pub fn backward_solve_in_place(&self, w: &mut [f64]) {
        debug_assert_eq!(w.len(), self.dim);
        for i in (0..self.dim).rev() {
            let wi = w[i] / self.get(i, i);
            w[i] = wi;
            let row = self.row(i);
            for (wk, l) in w[..i].iter_mut().zip(&row[..i]) {
                *wk -= l * wi;
            }
        }
    }

    /// Inverse of the factored matrix, in factor order.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim;
        let mut inv = DMatrix::zeros(n, n);
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = 0.0);
            col[j] = 1.0;
            self.forward_solve_in_place(&mut col);
            self.backward_solve_in_place(&mut col);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        super::symmetrize(&mut inv);
        inv
    }

    fn reserve(&mut self, rows: usize) {
        if rows <= self.stride {
            return;
        }
        let stride = rows.max(self.stride + self.stride / 4 + 4);
        let mut data = vec![0.0; stride * stride];
        for i in 0..self.dim {
            data[i * stride..i * stride + i + 1].copy_from_slice(self.row(i));
        }
        self.data = data;
        self.stride = stride;
    }

    /// Appends `new_index` as the trailing factor row. `m_full` is indexed by source variable.
    pub fn insert_in_place(&mut self, m_full: &DMatrix<f64>, new_index: usize) -> Result<()> {
        if self.perm.contains(&new_index) {
            return Err(Error::IndexAlreadyPresent(new_index));
        }
        let n = self.dim;
        self.reserve(n + 1);
        let mut max_diag = m_full[(new_index, new_index)];
        for &p in &self.perm {
            max_diag = max_diag.max(m_full[(p, p)]);
        }
        let base = n * self.stride;
        for k in 0..n {
            self.data[base + k] = m_full[(self.perm[k], new_index)];
        }
        // Solve L l = a for the new row.
        let mut sq = 0.0;
        for i in 0..n {
            let row = &self.data[i * self.stride..i * self.stride + i + 1];
            let mut acc = self.data[base + i];
            for (k, l) in row[..i].iter().enumerate() {
                acc -= l * self.data[base + k];
            }
            let v = acc / row[i];
            self.data[base + i] = v;
            sq += v * v;
        }
        let pivot = m_full[(new_index, new_index)] - sq;
        if !(pivot > PD_RELATIVE_TOLERANCE * max_diag) {
            return Err(Error::NotPositiveDefinite { position: n, pivot });
        }
        self.data[base + n] = pivot.sqrt();
        self.perm.push(new_index);
        self.dim += 1;
        Ok(())
    }

    /// Removes the row and column of source variable `drop_index`.
    ///
    /// Rows below the removed one shift up and the trailing block is
    /// re-triangularized with plane rotations (a rank-one update).
    pub fn delete_in_place(&mut self, drop_index: usize) -> Result<()> {
        let k = self
            .perm
            .iter()
            .position(|&p| p == drop_index)
            .ok_or(Error::IndexNotPresent(drop_index))?;
        let n = self.dim;
        let s = self.stride;
        let mut v: Vec<f64> = ((k + 1)..n).map(|i| self.data[i * s + k]).collect();
        for i in (k + 1)..n {
            let (dst, src) = ((i - 1) * s, i * s);
            self.data.copy_within(src..src + k, dst);
            self.data.copy_within(src + k + 1..src + i + 1, dst + k);
        }
        self.perm.remove(k);
        self.dim -= 1;

        let m = v.len();
        for j in 0..m {
            let jj = k + j;
            let a = self.data[jj * s + jj];
            let b = v[j];
            if b == 0.0 {
                continue;
            }
            let r = a.hypot(b);
            let (c, sn) = (a / r, b / r);
            self.data[jj * s + jj] = r;
            for i in (j + 1)..m {
                let idx = (k + i) * s + jj;
                let t = self.data[idx];
                self.data[idx] = c * t + sn * v[i];
                v[i] = c * v[i] - sn * t;
            }
        }
        Ok(())
    }
}

/// Cholesky factor of `m[indices, indices]`, rows in the order given.
pub fn cholesky_subset(m: &DMatrix<f64>, indices: &[usize], capacity: usize) -> Result<CholFactor> {
    let n = indices.len();
    let mut f = CholFactor::empty(capacity.max(n));
    let s = f.stride;
    let max_diag = indices.iter().map(|&i| m[(i, i)]).fold(0.0, f64::max);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = m[(indices[i], indices[j])];
            let (ri, rj) = (i * s, j * s);
            for k in 0..j {
                acc -= f.data[ri + k] * f.data[rj + k];
            }
            if i == j {
                if !(acc > PD_RELATIVE_TOLERANCE * max_diag) {
                    return Err(Error::NotPositiveDefinite {
                        position: i,
                        pivot: acc,
                    });
                }
                f.data[ri + i] = acc.sqrt();
            } else {
                f.data[ri + j] = acc / f.data[rj + j];
            }
        }
    }
    f.dim = n;
    f.perm = indices.to_vec();
    Ok(f)
}

/// Cholesky factorization of a symmetric positive definite matrix (identity `perm`).
pub fn cholesky(m: &DMatrix<f64>) -> Result<CholFactor> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let idx: Vec<usize> = (0..m.nrows()).collect();
    cholesky_subset(m, &idx, m.nrows())
}

/// `w = L⁻¹ z`, with `z` indexed by the factor's variables in ascending source order.
pub fn solve_lower(f: &CholFactor, z: &DVector<f64>) -> Result<DVector<f64>> {
    if z.len() != f.dim {
        return Err(Error::DimensionMismatch {
            expected: f.dim,
            got: z.len(),
        });
    }
    let mut sorted: Vec<usize> = f.perm.clone();
    sorted.sort_unstable();
    let mut w: Vec<f64> = f
        .perm
        .iter()
        .map(|p| z[sorted.binary_search(p).expect("perm member")])
        .collect();
    f.forward_solve_in_place(&mut w);
    Ok(DVector::from_vec(w))
}

/// Factor of the matrix enlarged by `new_index`, appended as the last factor row.
pub fn chol_insert(f: &CholFactor, m_full: &DMatrix<f64>, new_index: usize) -> Result<CholFactor> {
    let mut out = f.clone();
    out.insert_in_place(m_full, new_index)?;
    Ok(out)
}

/// Factor of the matrix with `drop_index`'s row and column removed.
pub fn chol_delete(f: &CholFactor, drop_index: usize) -> Result<CholFactor> {
    let mut out = f.clone();
    out.delete_in_place(drop_index)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_oracles::{assert_close, random_spd, rng};

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
    }

    #[test]
    fn factor_two_by_two() {
        let a = m(&[&[4.0, 2.0], &[2.0, 5.0]]);
        let f = cholesky(&a).unwrap();
        assert_eq!(f.lower(), m(&[&[2.0, 0.0], &[1.0, 2.0]]));
        assert_eq!(f.reconstruct(), a);
    }

    #[test]
    fn factor_scalar_identity() {
        let f = cholesky(&m(&[&[1.0]])).unwrap();
        assert_eq!(f.lower(), m(&[&[1.0]]));
    }

    #[test]
    fn indefinite_is_rejected() {
        let err = cholesky(&m(&[&[2.0, 3.0], &[3.0, 1.0]])).unwrap_err();
        match err {
            Error::NotPositiveDefinite { position, pivot } => {
                assert_eq!(position, 1);
                assert_close!(pivot, 1.0 - 9.0 / 2.0, 1e-15);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn relative_pivot_threshold() {
        // Small-magnitude but well conditioned: accepted.
        let tiny = m(&[&[1e-20, 0.0], &[0.0, 2e-20]]);
        assert!(cholesky(&tiny).is_ok());
        // Rank deficient up to rounding: rejected.
        let sing = m(&[&[1.0, 1.0], &[1.0, 1.0 + 1e-14]]);
        assert!(cholesky(&sing).is_err());
    }

    #[test]
    fn solve_lower_examples() {
        let f = cholesky(&m(&[&[4.0, 2.0], &[2.0, 5.0]])).unwrap();
        let w = solve_lower(&f, &DVector::from_vec(vec![2.0, 3.0])).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 1.0]);
        assert_eq!(w.norm_squared(), 2.0);

        let f = cholesky(&m(&[&[1.0]])).unwrap();
        assert_eq!(solve_lower(&f, &DVector::from_vec(vec![0.0])).unwrap()[0], 0.0);

        let f = cholesky(&DMatrix::identity(3, 3)).unwrap();
        let w = solve_lower(&f, &DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 2.0, 3.0]);

        assert!(matches!(
            solve_lower(&f, &DVector::from_vec(vec![1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn insert_matches_scratch_example() {
        let full = m(&[&[4.0, 2.0], &[2.0, 5.0]]);
        let f = cholesky_subset(&full, &[0], 2).unwrap();
        let g = chol_insert(&f, &full, 1).unwrap();
        assert_eq!(g.perm(), &[0, 1]);
        assert_eq!(g.lower(), cholesky(&full).unwrap().lower());

        let e = CholFactor::empty(0);
        let g = chol_insert(&e, &m(&[&[9.0]]), 0).unwrap();
        assert_eq!(g.lower(), m(&[&[3.0]]));

        assert_eq!(chol_insert(&g, &m(&[&[9.0]]), 0), Err(Error::IndexAlreadyPresent(0)));
    }

    #[test]
    fn insert_detects_loss_of_definiteness() {
        let full = m(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let f = cholesky_subset(&full, &[0], 2).unwrap();
        assert!(matches!(
            chol_insert(&f, &full, 1),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn delete_examples() {
        let full = m(&[&[4.0, 2.0], &[2.0, 5.0]]);
        let f = cholesky(&full).unwrap();
        let g = chol_delete(&f, 0).unwrap();
        assert_eq!(g.perm(), &[1]);
        assert_close!(g.get(0, 0), 5f64.sqrt(), 1e-15);

        // Trailing deletion is a pure truncation.
        let mut r = rng(3);
        let a = random_spd(&mut r, 6, 1.0);
        let f = cholesky(&a).unwrap();
        let g = chol_delete(&f, 5).unwrap();
        let l = f.lower();
        assert_eq!(g.lower(), l.view((0, 0), (5, 5)).into_owned());

        assert_eq!(chol_delete(&g, 5), Err(Error::IndexNotPresent(5)));
    }

    #[test]
    fn randomized_delete_reconstructs() {
        let mut r = rng(11);
        for drop in 0..10 {
            let a = random_spd(&mut r, 10, 1.0);
            let f = cholesky(&a).unwrap();
            let g = chol_delete(&f, drop).unwrap();
            let keep: Vec<usize> = (0..10).filter(|&i| i != drop).collect();
            let sub = crate::linalg::submatrix(&a, &keep, &keep);
            let scratch = cholesky(&sub).unwrap();
            assert_eq!(g.perm(), keep.as_slice());
            assert!(crate::linalg::relative_frobenius(&g.lower(), &scratch.lower()) < 1e-10);
            assert!(crate::linalg::relative_frobenius(&g.reconstruct(), &sub) < 1e-10);
        }
    }

    #[test]
    fn log_det_matches_diagonal() {
        let a = m(&[&[4.0, 2.0], &[2.0, 5.0]]);
        let f = cholesky(&a).unwrap();
        assert_close!(f.log_det(), 16f64.ln(), 1e-14);
    }

    #[test]
    fn inverse_recovers_identity() {
        let mut r = rng(5);
        let a = random_spd(&mut r, 7, 1.0);
        let inv = cholesky(&a).unwrap().inverse();
        let id = &a * &inv;
        assert!((id - DMatrix::identity(7, 7)).norm() < 1e-10);
    }

    #[test]
    fn growth_beyond_capacity() {
        let mut r = rng(9);
        let a = random_spd(&mut r, 9, 1.0);
        let mut f = CholFactor::empty(1);
        for i in [4, 0, 8, 2, 6, 1] {
            f.insert_in_place(&a, i).unwrap();
        }
        let idx = [4, 0, 8, 2, 6, 1];
        let sub = crate::linalg::submatrix(&a, &idx, &idx);
        assert!(crate::linalg::relative_frobenius(&f.reconstruct(), &sub) < 1e-12);
    }
}
