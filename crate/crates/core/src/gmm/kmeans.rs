use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{regularize, GaussianComponent, MixtureModel, TrainConfig};
use crate::linalg::{cholesky, symmetrize};
use crate::{Dataset, Error, Result};

/// K-means initialization on observed coordinates only.
///
/// Seeding is k-means++; distances and centroid updates skip missing cells.
/// Covariances are per-cluster averages over pairwise-observed entries, clamped
/// to PSD when needed and then regularized.
pub fn kmeans_init(dataset: &Dataset, config: &TrainConfig) -> Result<MixtureModel> {
    config.validate()?;
    let (n, d, l) = (dataset.n(), dataset.d(), config.components);
    if n < l {
        return Err(Error::InvalidConfig(format!("{l} components need at least {l} samples, got {n}")));
    }
    if d == 0 {
        return Err(Error::InvalidConfig("dataset has no columns".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let (col_mean, col_seen) = column_means(dataset);
    let filled_row = |i: usize| -> Vec<f64> {
        let row = dataset.row(i);
        (0..d)
            .map(|c| if dataset.is_missing(i, c) { col_mean[c] } else { row[c] })
            .collect()
    };

    let mut centroids = seed_plus_plus(dataset, l, &filled_row, &mut rng);
    let mut assign = vec![0usize; n];
    for _ in 0..config.kmeans_iters.max(1) {
        let changed = assign_all(dataset, &centroids, &mut assign);
        fix_empty(&mut assign, &mut centroids, l, &filled_row, &mut rng);
        update_centroids(dataset, &assign, &mut centroids);
        if !changed {
            break;
        }
    }
    assign_all(dataset, &centroids, &mut assign);
    fix_empty(&mut assign, &mut centroids, l, &filled_row, &mut rng);
    update_centroids(dataset, &assign, &mut centroids);

    let global_var = column_variances(dataset, &col_mean);
    let mut components = Vec::with_capacity(l);
    for j in 0..l {
        let members: Vec<usize> = (0..n).filter(|&i| assign[i] == j).collect();
        let mut mean = centroids[j].clone();
        let mut cov = pairwise_covariance(dataset, &members, &mean, &global_var);
        for c in (0..d).filter(|&c| !col_seen[c]) {
            cov[(c, c)] = 1.0;
        }
        let mut cov = regularize(&clamp_psd(cov), config.ridge, config.pc_fraction);
        for c in (0..d).filter(|&c| !col_seen[c]) {
            mean[c] = 0.0;
            for k in 0..d {
                cov[(c, k)] = 0.0;
                cov[(k, c)] = 0.0;
            }
            cov[(c, c)] = if config.ridge > 0.0 { config.ridge } else { 1.0 };
        }
        let weight = members.len() as f64 / n as f64;
        let comp = GaussianComponent::new(DVector::from_vec(mean), cov, weight.ln()).map_err(|e| {
            Error::Numerical {
                component: j,
                pattern: None,
                source: Box::new(e),
            }
        })?;
        components.push(comp);
    }
    MixtureModel::new(components, config.clone())
}

fn column_means(dataset: &Dataset) -> (Vec<f64>, Vec<bool>) {
    let d = dataset.d();
    let mut sum = vec![0.0; d];
    let mut count = vec![0usize; d];
    for i in 0..dataset.n() {
        for c in 0..d {
            if let Some(v) = dataset.get(i, c) {
                sum[c] += v;
                count[c] += 1;
            }
        }
    }
    let mean = (0..d).map(|c| if count[c] > 0 { sum[c] / count[c] as f64 } else { 0.0 }).collect();
    (mean, count.iter().map(|&k| k > 0).collect())
}

fn column_variances(dataset: &Dataset, mean: &[f64]) -> Vec<f64> {
    let d = dataset.d();
    let mut ss = vec![0.0; d];
    let mut count = vec![0usize; d];
    for i in 0..dataset.n() {
        for c in 0..d {
            if let Some(v) = dataset.get(i, c) {
                ss[c] += (v - mean[c]).powi(2);
                count[c] += 1;
            }
        }
    }
    (0..d).map(|c| if count[c] > 0 { ss[c] / count[c] as f64 } else { 0.0 }).collect()
}

fn observed_sq_dist(dataset: &Dataset, i: usize, centroid: &[f64]) -> f64 {
    let row = dataset.row(i);
    let mask = dataset.row_mask(i);
    let mut s = 0.0;
    for c in 0..row.len() {
        if !mask[c] {
            s += (row[c] - centroid[c]).powi(2);
        }
    }
    s
}

fn seed_plus_plus(
    dataset: &Dataset,
    l: usize,
    filled_row: &impl Fn(usize) -> Vec<f64>,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let n = dataset.n();
    let mut centroids = vec![filled_row(rng.random_range(0..n))];
    let mut best: Vec<f64> = (0..n).map(|i| observed_sq_dist(dataset, i, &centroids[0])).collect();
    while centroids.len() < l {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in best.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = filled_row(pick);
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(observed_sq_dist(dataset, i, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign_all(dataset: &Dataset, centroids: &[Vec<f64>], assign: &mut [usize]) -> bool {
    let mut changed = false;
    for (i, a) in assign.iter_mut().enumerate() {
        let mut best = (f64::INFINITY, 0);
        for (j, c) in centroids.iter().enumerate() {
            let dist = observed_sq_dist(dataset, i, c);
            if dist < best.0 {
                best = (dist, j);
            }
        }
        if *a != best.1 {
            *a = best.1;
            changed = true;
        }
    }
    changed
}

/// Moves a random sample from a cluster with several members into each empty cluster.
fn fix_empty(
    assign: &mut [usize],
    centroids: &mut [Vec<f64>],
    l: usize,
    filled_row: &impl Fn(usize) -> Vec<f64>,
    rng: &mut ChaCha8Rng,
) {
    let mut counts = vec![0usize; l];
    for &a in assign.iter() {
        counts[a] += 1;
    }
    for j in 0..l {
        if counts[j] > 0 {
            continue;
        }
        let donors: Vec<usize> = (0..assign.len()).filter(|&i| counts[assign[i]] > 1).collect();
        let i = donors[rng.random_range(0..donors.len())];
        counts[assign[i]] -= 1;
        assign[i] = j;
        counts[j] = 1;
        centroids[j] = filled_row(i);
    }
}

fn update_centroids(dataset: &Dataset, assign: &[usize], centroids: &mut [Vec<f64>]) {
    let d = dataset.d();
    let l = centroids.len();
    let mut sum = vec![vec![0.0; d]; l];
    let mut count = vec![vec![0usize; d]; l];
    for (i, &j) in assign.iter().enumerate() {
        for c in 0..d {
            if let Some(v) = dataset.get(i, c) {
                sum[j][c] += v;
                count[j][c] += 1;
            }
        }
    }
    for j in 0..l {
        for c in 0..d {
            if count[j][c] > 0 {
                centroids[j][c] = sum[j][c] / count[j][c] as f64;
            }
        }
    }
}

/// Average of `(x_a − μ_a)(x_b − μ_b)` over members observing both `a` and `b`.
/// Diagonal entries with no observations fall back to the global column variance.
fn pairwise_covariance(dataset: &Dataset, members: &[usize], mean: &[f64], global_var: &[f64]) -> DMatrix<f64> {
    let d = dataset.d();
    let mut sum = DMatrix::<f64>::zeros(d, d);
    let mut count = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0; d];
    for &i in members {
        let row = dataset.row(i);
        let mask = dataset.row_mask(i);
        for c in 0..d {
            centered[c] = if mask[c] { 0.0 } else { row[c] - mean[c] };
        }
        for a in 0..d {
            if mask[a] {
                continue;
            }
            for b in 0..=a {
                if !mask[b] {
                    sum[(a, b)] += centered[a] * centered[b];
                    count[(a, b)] += 1.0;
                }
            }
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..=a {
            let v = if count[(a, b)] > 0.0 {
                sum[(a, b)] / count[(a, b)]
            } else if a == b {
                global_var[a]
            } else {
                0.0
            };
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    cov
}

/// Pairwise estimates need not be PSD; negative eigenvalues are clipped to zero.
fn clamp_psd(mut cov: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut cov);
    if cholesky(&cov).is_ok() {
        return cov;
    }
    let eig = SymmetricEigen::new(cov);
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&vals) * v.transpose();
    symmetrize(&mut out);
    out
}
