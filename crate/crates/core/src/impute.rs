//! Missing-value imputation: mixture conditional mean, training-set column
//! mean, and k-nearest-neighbour with oracle distances.

use crate::gmm::{posterior_fill, MixtureModel};
use crate::{Dataset, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationResult {
    /// Complete dataset; observed cells are copied bit for bit.
    pub filled: Dataset,
    /// Row-major, `true` where the value was imputed.
    pub provenance: Vec<bool>,
    pub strategy: String,
}

fn finish(dataset: &Dataset, values: Vec<f64>, strategy: String) -> Result<ImputationResult> {
    let mut filled = Dataset::complete(dataset.n(), dataset.d(), values)?;
    if let Some(names) = dataset.column_names() {
        filled = filled.with_column_names(names.to_vec());
    }
    Ok(ImputationResult {
        filled,
        provenance: dataset.mask().to_vec(),
        strategy,
    })
}

/// Fills each missing block with `E[x_m | x_o]` under the mixture.
pub fn impute_mixture(model: &MixtureModel, dataset: &Dataset) -> Result<ImputationResult> {
    let (values, _) = posterior_fill(model, dataset)?;
    finish(dataset, values, format!("mixture(L={})", model.n_components()))
}

/// Observed-entry mean of every column of `train`; zero for columns with no observations.
pub fn column_means(train: &Dataset) -> Vec<f64> {
    let d = train.d();
    let mut sum = vec![0.0; d];
    let mut count = vec![0usize; d];
    for i in 0..train.n() {
        for c in 0..d {
            if let Some(v) = train.get(i, c) {
                sum[c] += v;
                count[c] += 1;
            }
        }
    }
    (0..d)
        .map(|c| if count[c] > 0 { sum[c] / count[c] as f64 } else { 0.0 })
        .collect()
}

/// Replaces missing cells by the column means of `train`.
pub fn impute_global_mean(dataset: &Dataset, train: &Dataset) -> Result<ImputationResult> {
    if train.d() != dataset.d() {
        return Err(Error::DimensionMismatch {
            expected: dataset.d(),
            got: train.d(),
        });
    }
    let means = column_means(train);
    let d = dataset.d();
    let values = dataset
        .values()
        .iter()
        .zip(dataset.mask())
        .enumerate()
        .map(|(k, (&v, &m))| if m { means[k % d] } else { v })
        .collect();
    finish(dataset, values, "mean".into())
}

/// k-nearest-neighbour imputation with every row of `dataset` as a candidate.
pub fn impute_knn(dataset: &Dataset, reference: &Dataset, k: usize) -> Result<ImputationResult> {
    let pool: Vec<usize> = (0..dataset.n()).collect();
    impute_knn_pool(dataset, reference, k, &pool)
}

/// k-nearest-neighbour imputation drawing neighbours from `pool` only.
///
/// Distances are Euclidean over all columns of the complete `reference` (row `i`
/// of `reference` is the uncorrupted version of row `i` of `dataset`). A missing
/// cell `(i, c)` takes the mean of `dataset[r, c]` over the `k` nearest pool rows
/// `r ≠ i` that observe `c`, fewer if not enough exist; ties go to the lower row.
/// Cells with no candidate fall back to the pool column mean.
pub fn impute_knn_pool(dataset: &Dataset, reference: &Dataset, k: usize, pool: &[usize]) -> Result<ImputationResult> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    if reference.n() != dataset.n() || reference.d() != dataset.d() {
        return Err(Error::ShapeMismatch(format!(
            "reference is {}x{}, dataset is {}x{}",
            reference.n(),
            reference.d(),
            dataset.n(),
            dataset.d()
        )));
    }
    if !reference.is_complete() {
        return Err(Error::IncompleteReference);
    }
    if let Some(&bad) = pool.iter().find(|&&r| r >= dataset.n()) {
        return Err(Error::ShapeMismatch(format!("pool row {bad} out of range")));
    }
    let d = dataset.d();
    let fallback = column_means(&dataset.select_rows(pool));
    let mut values = dataset.values().to_vec();
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(pool.len());
    for i in 0..dataset.n() {
        if !dataset.row_mask(i).iter().any(|&m| m) {
            continue;
        }
        let q = reference.row(i);
        order.clear();
        order.extend(pool.iter().filter(|&&r| r != i).map(|&r| {
            let dist: f64 = reference.row(r).iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum();
            (dist, r)
        }));
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for c in 0..d {
            if !dataset.is_missing(i, c) {
                continue;
            }
            let mut sum = 0.0;
            let mut taken = 0;
            for &(_, r) in &order {
                if let Some(v) = dataset.get(r, c) {
                    sum += v;
                    taken += 1;
                    if taken == k {
                        break;
                    }
                }
            }
            values[i * d + c] = if taken > 0 { sum / taken as f64 } else { fallback[c] };
        }
    }
    finish(dataset, values, format!("knn(k={k})"))
}
