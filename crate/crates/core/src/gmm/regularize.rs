use nalgebra::{DMatrix, SymmetricEigen};

use crate::linalg::symmetrize;

/// Ridge and principal-component regularization of a covariance matrix.
///
/// Keeps the top `⌈pc_fraction·d⌉` eigenpairs, replaces the discarded eigenvalues
/// by `max(ridge, 1e-4 × smallest kept)`, then adds `ridge` to every eigenvalue.
/// With nothing discarded this is exactly `cov + ridge·I`.
pub fn regularize(cov: &DMatrix<f64>, ridge: f64, pc_fraction: f64) -> DMatrix<f64> {
    let d = cov.nrows();
    let keep = ((pc_fraction * d as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut out = cov.clone();
    symmetrize(&mut out);
    if keep >= d {
        for i in 0..d {
            out[(i, i)] += ridge;
        }
        return out;
    }
    let eig = SymmetricEigen::new(out);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let smallest_kept = eig.eigenvalues[order[keep - 1]].max(0.0);
    let floor = ridge.max(smallest_kept * 1e-4);
    let mut vals = vec![0.0; d];
    for (rank, &k) in order.iter().enumerate() {
        let lam = if rank < keep {
            eig.eigenvalues[k].max(0.0)
        } else {
            floor
        };
        vals[k] = lam + ridge;
    }
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(d, d, |i, k| v[(i, k)] * vals[k]);
    let mut out = scaled * v.transpose();
    symmetrize(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_oracles::{random_spd, rng};

    #[test]
    fn full_rank_adds_ridge() {
        let mut r = rng(1);
        let c = random_spd(&mut r, 5, 0.1);
        let out = regularize(&c, 0.25, 1.0);
        let mut want = c.clone();
        for i in 0..5 {
            want[(i, i)] += 0.25;
        }
        assert_eq!(out, want);
    }

    #[test]
    fn rank_one_is_floored() {
        let u = nalgebra::DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let c = &u * u.transpose();
        let out = regularize(&c, 0.1, 1.0);
        let mut ev: Vec<f64> = out.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - 0.1).abs() < 1e-12 && (ev[1] - 0.1).abs() < 1e-12);
        assert!((ev[2] - 9.1).abs() < 1e-12);
    }

    #[test]
    fn truncation_replaces_tail() {
        let c = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 3.0, 2.0, 1.0]));
        let out = regularize(&c, 0.0, 0.5);
        let mut ev: Vec<f64> = out.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        assert!((ev[0] - 4.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
        assert!((ev[2] - 3e-4).abs() < 1e-12 && (ev[3] - 3e-4).abs() < 1e-12);
    }

    #[test]
    fn output_is_spd_above_ridge() {
        let a = DMatrix::from_fn(6, 2, |i, j| ((i * 3 + j) as f64).sin());
        let psd = &a * a.transpose();
        for pc in [0.3, 0.75, 0.9, 1.0] {
            let out = regularize(&psd, 0.05, pc);
            let min = out.symmetric_eigenvalues().min();
            assert!(min >= 0.05 - 1e-12, "pc={pc} min={min}");
        }
    }
}
