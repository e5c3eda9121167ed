//! Datasets with per-cell missingness, CSV ingestion, normalization and
//! synthetic generators.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Value stored in masked slots. Any arithmetic that reads one propagates NaN.
pub const MISSING_SENTINEL: f64 = f64::NAN;

/// An `n × d` table of reals with a missingness mask (`true` ⇔ missing).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
    column_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset from row-major values and mask. Masked slots are overwritten
    /// with [`MISSING_SENTINEL`].
    pub fn new(n: usize, d: usize, mut values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != n * d || mask.len() != n * d {
            return Err(Error::ShapeMismatch(format!(
                "expected {} cells, got {} values and {} mask entries",
                n * d,
                values.len(),
                mask.len()
            )));
        }
        for (v, &m) in values.iter_mut().zip(&mask) {
            if m {
                *v = MISSING_SENTINEL;
            }
        }
        Ok(Self {
            n,
            d,
            values,
            mask,
            column_names: None,
        })
    }

    pub fn complete(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(n, d, values, vec![false; n * d])
    }

    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n * d);
        let mut mask = Vec::with_capacity(n * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::RaggedRows {
                    row: i,
                    expected: d,
                    got: r.len(),
                });
            }
            for c in r {
                values.push(c.unwrap_or(MISSING_SENTINEL));
                mask.push(c.is_none());
            }
        }
        Self::new(n, d, values, mask)
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Self {
        self.column_names = Some(names);
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    /// Raw row, including sentinel values at missing cells.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn row_mask(&self, i: usize) -> &[bool] {
        &self.mask[i * self.d..(i + 1) * self.d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_missing(&self, i: usize, c: usize) -> bool {
        self.mask[i * self.d + c]
    }

    pub fn get(&self, i: usize, c: usize) -> Option<f64> {
        (!self.is_missing(i, c)).then(|| self.values[i * self.d + c])
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_complete(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(rows.len() * self.d);
        let mut mask = Vec::with_capacity(rows.len() * self.d);
        for &r in rows {
            values.extend_from_slice(self.row(r));
            mask.extend_from_slice(self.row_mask(r));
        }
        Dataset {
            n: rows.len(),
            d: self.d,
            values,
            mask,
            column_names: self.column_names.clone(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(self.n * cols.len());
        let mut mask = Vec::with_capacity(self.n * cols.len());
        for i in 0..self.n {
            for &c in cols {
                values.push(self.values[i * self.d + c]);
                mask.push(self.mask[i * self.d + c]);
            }
        }
        Dataset {
            n: self.n,
            d: cols.len(),
            values,
            mask,
            column_names: self
                .column_names
                .as_ref()
                .map(|names| cols.iter().map(|&c| names[c].clone()).collect()),
        }
    }

    /// Marks every cell of the given columns as missing.
    pub fn mask_columns(&self, cols: &[usize]) -> Dataset {
        let mut out = self.clone();
        for i in 0..self.n {
            for &c in cols {
                out.mask[i * self.d + c] = true;
                out.values[i * self.d + c] = MISSING_SENTINEL;
            }
        }
        out
    }

    /// Dataset with the same observed values and the given mask applied on top.
    pub fn with_extra_mask(&self, extra: &[bool]) -> Result<Dataset> {
        if extra.len() != self.mask.len() {
            return Err(Error::ShapeMismatch("mask length differs from dataset".into()));
        }
        let mask = self.mask.iter().zip(extra).map(|(&a, &b)| a || b).collect();
        let mut out = Dataset::new(self.n, self.d, self.values.clone(), mask)?;
        out.column_names = self.column_names.clone();
        Ok(out)
    }

    /// Per-column mean and population covariance of a complete dataset.
    pub fn complete_moments(&self) -> Option<(Vec<f64>, DMatrix<f64>)> {
        if !self.is_complete() || self.n == 0 {
            return None;
        }
        let n = self.n as f64;
        let mut mean = vec![0.0; self.d];
        for i in 0..self.n {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = DMatrix::zeros(self.d, self.d);
        for i in 0..self.n {
            let r = self.row(i);
            for a in 0..self.d {
                for b in 0..=a {
                    cov[(a, b)] += (r[a] - mean[a]) * (r[b] - mean[b]);
                }
            }
        }
        for a in 0..self.d {
            for b in 0..=a {
                cov[(a, b)] /= n;
                cov[(b, a)] = cov[(a, b)];
            }
        }
        Some((mean, cov))
    }
}

/// CSV ingestion options.
#[derive(Debug, Clone)]
pub struct CsvOptions {
    /// Tokens treated as missing. Matching is exact and case-sensitive.
    pub missing_markers: Vec<String>,
    pub has_header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            missing_markers: vec![String::new(), "NA".into(), "NaN".into()],
            has_header: false,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, options)
}

pub fn read_csv<R: Read>(reader: R, options: &CsvOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut names = None;
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut width = None;
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: line,
            column: 0,
            message: e.to_string(),
        })?;
        if line == 0 && options.has_header {
            names = Some(record.iter().map(str::to_string).collect::<Vec<_>>());
            width = Some(record.len());
            continue;
        }
        let row_idx = rows.len();
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRows {
                row: row_idx,
                expected,
                got: record.len(),
            });
        }
        let mut row = Vec::with_capacity(expected);
        for (c, field) in record.iter().enumerate() {
            if options.missing_markers.iter().any(|m| m == field) {
                row.push(None);
                continue;
            }
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row: row_idx,
                column: c,
                message: format!("cannot parse {field:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: row_idx,
                    column: c,
                    message: format!("non-finite value {field:?}"),
                });
            }
            row.push(Some(v));
        }
        rows.push(row);
    }
    let mut ds = Dataset::from_rows(&rows)?;
    if rows.is_empty() {
        ds.d = width.unwrap_or(0);
    }
    if let Some(names) = names {
        ds = ds.with_column_names(names);
    }
    Ok(ds)
}

/// Writes values as CSV; missing cells are written as empty fields.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W, header: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(e.to_string());
    if header {
        let names: Vec<String> = match dataset.column_names() {
            Some(n) => n.to_vec(),
            None => (0..dataset.d()).map(|c| format!("x{c}")).collect(),
        };
        w.write_record(&names).map_err(csv_err)?;
    }
    for i in 0..dataset.n() {
        let fields: Vec<String> = (0..dataset.d())
            .map(|c| dataset.get(i, c).map(|v| v.to_string()).unwrap_or_default())
            .collect();
        w.write_record(&fields).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a 0/1 table, one row per sample.
pub fn write_flags_csv<W: Write>(flags: &[bool], d: usize, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in flags.chunks(d.max(1)) {
        let fields: Vec<&str> = row.iter().map(|&f| if f { "1" } else { "0" }).collect();
        w.write_record(&fields).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Masks each observed cell independently with probability `fraction`.
pub fn mask_mcar(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    let all: Vec<usize> = (0..dataset.d()).collect();
    mask_mcar_columns(dataset, fraction, seed, &all)
}

/// Like [`mask_mcar`] but only cells in `columns` are eligible.
pub fn mask_mcar_columns(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
    columns: &[usize],
) -> Result<Dataset> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "missing fraction {fraction} must lie in [0, 1)"
        )));
    }
    let mut eligible = vec![false; dataset.d()];
    for &c in columns {
        eligible[c] = true;
    }
    let mut rng = seeded(seed);
    let extra: Vec<bool> = (0..dataset.n() * dataset.d())
        .map(|k| {
            let u: f64 = rng.random();
            eligible[k % dataset.d()] && u < fraction
        })
        .collect();
    dataset.with_extra_mask(&extra)
}

/// Masks one uniformly placed `square × square` block per row of `height × width` images.
/// The block always lies fully inside the image.
pub fn mask_square(
    dataset: &Dataset,
    height: usize,
    width: usize,
    square: usize,
    seed: u64,
) -> Result<Dataset> {
    if height * width != dataset.d() {
        return Err(Error::ShapeMismatch(format!(
            "{height}x{width} images need {} columns, dataset has {}",
            height * width,
            dataset.d()
        )));
    }
    if square == 0 || square > height.min(width) {
        return Err(Error::ShapeMismatch(format!(
            "square size {square} does not fit in {height}x{width}"
        )));
    }
    let mut rng = seeded(seed);
    let mut extra = vec![false; dataset.n() * dataset.d()];
    for i in 0..dataset.n() {
        let top = rng.random_range(0..=height - square);
        let left = rng.random_range(0..=width - square);
        for y in top..top + square {
            for x in left..left + square {
                extra[i * dataset.d() + y * width + x] = true;
            }
        }
    }
    dataset.with_extra_mask(&extra)
}

/// Masks one contiguous run of columns per row (start uniform, length uniform in
/// `1..=max_run`, clipped at the last column). Produces many distinct but
/// mutually close missing patterns, as sensor dropouts do.
pub fn mask_runs(dataset: &Dataset, max_run: usize, seed: u64) -> Result<Dataset> {
    let d = dataset.d();
    if max_run == 0 || max_run > d {
        return Err(Error::InvalidConfig(format!(
            "run length {max_run} must lie in 1..={d}"
        )));
    }
    let mut rng = seeded(seed);
    let mut extra = vec![false; dataset.n() * d];
    for i in 0..dataset.n() {
        let start = rng.random_range(0..d);
        let len = rng.random_range(1..=max_run);
        for c in start..(start + len).min(d) {
            extra[i * d + c] = true;
        }
    }
    dataset.with_extra_mask(&extra)
}

/// Generating parameters of a synthetic mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureTruth {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub labels: Vec<usize>,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn sample_mvn(rng: &mut ChaCha8Rng, mean: &[f64], chol: &DMatrix<f64>, out: &mut Vec<f64>) {
    let z = normal_vec(rng, mean.len());
    for i in 0..mean.len() {
        let mut v = mean[i];
        for k in 0..=i {
            v += chol[(i, k)] * z[k];
        }
        out.push(v);
    }
}

/// Samples `n` rows from a random `components`-component full-covariance mixture.
///
/// Covariances are `A Aᵀ / d + I`; means are Gaussian directions rescaled to
/// norm `separation`. Sample `i` comes from component `i mod components`.
pub fn gen_mixture(
    n: usize,
    d: usize,
    components: usize,
    separation: f64,
    seed: u64,
) -> Result<(Dataset, MixtureTruth)> {
    if components == 0 || n < components {
        return Err(Error::InvalidConfig(format!(
            "need n >= components >= 1, got n={n}, components={components}"
        )));
    }
    let mut rng = seeded(seed);
    let mut means = Vec::new();
    let mut covs = Vec::new();
    let mut chols = Vec::new();
    for _ in 0..components {
        let dir = normal_vec(&mut rng, d);
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        means.push(dir.iter().map(|v| v * separation / norm).collect::<Vec<_>>());
        let a = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
        let cov: DMatrix<f64> = &a * a.transpose() / d as f64 + DMatrix::identity(d, d);
        chols.push(crate::linalg::cholesky(&cov)?.lower());
        covs.push(
            (0..d)
                .map(|i| (0..d).map(|j| cov[(i, j)]).collect())
                .collect::<Vec<Vec<f64>>>(),
        );
    }
    let mut values = Vec::with_capacity(n * d);
    let labels: Vec<usize> = (0..n).map(|i| i % components).collect();
    for &j in &labels {
        sample_mvn(&mut rng, &means[j], &chols[j], &mut values);
    }
    let truth = MixtureTruth {
        weights: vec![1.0 / components as f64; components],
        means,
        covariances: covs,
        labels,
    };
    Ok((Dataset::complete(n, d, values)?, truth))
}

/// Single zero-mean Gaussian with unit variances and constant correlation `rho`.
pub fn gen_correlated_gaussian(n: usize, d: usize, rho: f64, seed: u64) -> Result<Dataset> {
    let cov = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rho });
    let chol = crate::linalg::cholesky(&cov)?.lower();
    let mut rng = seeded(seed);
    let mean = vec![0.0; d];
    let mut values = Vec::with_capacity(n * d);
    for _ in 0..n {
        sample_mvn(&mut rng, &mean, &chol, &mut values);
    }
    Dataset::complete(n, d, values)
}

/// Regression data shaped like a small tabular benchmark: `inputs` strongly
/// correlated columns driven by five latent factors with little independent
/// noise, plus a nonlinear target as the last column.
pub fn gen_regression(n: usize, inputs: usize, seed: u64) -> Result<Dataset> {
    const LATENT: usize = 5;
    const NOISE: f64 = 0.05;
    let mut rng = seeded(seed);
    let loadings = DMatrix::<f64>::from_fn(inputs, LATENT, |_, _| StandardNormal.sample(&mut rng));
    let weights = normal_vec(&mut rng, inputs);
    let mut values = Vec::with_capacity(n * (inputs + 1));
    for _ in 0..n {
        let z = normal_vec(&mut rng, LATENT);
        let noise = normal_vec(&mut rng, inputs);
        let x: Vec<f64> = (0..inputs)
            .map(|c| (0..LATENT).map(|k| loadings[(c, k)] * z[k]).sum::<f64>() + NOISE * noise[c])
            .collect();
        let lin: f64 = x.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>() / inputs as f64;
        let e: f64 = StandardNormal.sample(&mut rng);
        let y = (1.5 * lin).sin() + 0.5 * z[0] * z[1] + (z[2]).tanh() + 0.1 * e;
        values.extend_from_slice(&x);
        values.push(y);
    }
    Dataset::complete(n, inputs + 1, values)
}

/// Smooth low-rank `height × width` images drawn around `classes` prototypes.
pub fn gen_images(n: usize, height: usize, width: usize, classes: usize, seed: u64) -> Result<Dataset> {
    const RANK: usize = 4;
    let mut rng = seeded(seed);
    let d = height * width;
    let mut basis = Vec::with_capacity(RANK);
    for _ in 0..RANK {
        let fy = rng.random_range(0..3) as f64;
        let fx = rng.random_range(0..3) as f64;
        let py: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let px: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let b: Vec<f64> = (0..d)
            .map(|k| {
                let (y, x) = ((k / width) as f64 + 0.5, (k % width) as f64 + 0.5);
                (std::f64::consts::PI * fy * y / height as f64 + py).cos()
                    * (std::f64::consts::PI * fx * x / width as f64 + px).cos()
            })
            .collect();
        basis.push(b);
    }
    let protos: Vec<Vec<f64>> = (0..classes.max(1))
        .map(|_| normal_vec(&mut rng, RANK).iter().map(|v| 1.5 * v).collect())
        .collect();
    let mut values = Vec::with_capacity(n * d);
    for _ in 0..n {
        let k = rng.random_range(0..protos.len());
        let coef: Vec<f64> = protos[k]
            .iter()
            .map(|p| p + 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        for px in 0..d {
            let e: f64 = StandardNormal.sample(&mut rng);
            let v: f64 = (0..RANK).map(|r| coef[r] * basis[r][px]).sum::<f64>() + 0.05 * e;
            values.push(v);
        }
    }
    Dataset::complete(n, d, values)
}

/// Per-column affine normalization fitted on observed training entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Population mean and standard deviation of the observed entries of `train_rows`.
/// Constant or unobserved columns get standard deviation 1.
pub fn fit_normalizer(dataset: &Dataset, train_rows: &[usize]) -> Result<Normalizer> {
    if train_rows.is_empty() {
        return Err(Error::InvalidConfig("normalizer needs at least one training row".into()));
    }
    let d = dataset.d();
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for c in 0..d {
        let obs: Vec<f64> = train_rows.iter().filter_map(|&i| dataset.get(i, c)).collect();
        if obs.is_empty() {
            std[c] = 1.0;
            continue;
        }
        let m = obs.iter().sum::<f64>() / obs.len() as f64;
        let var = obs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / obs.len() as f64;
        mean[c] = m;
        std[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    Ok(Normalizer { mean, std })
}

impl Normalizer {
    pub fn normalize(&self, dataset: &Dataset) -> Dataset {
        self.map(dataset, |v, c| (v - self.mean[c]) / self.std[c])
    }

    pub fn denormalize(&self, dataset: &Dataset) -> Dataset {
        self.map(dataset, |v, c| v * self.std[c] + self.mean[c])
    }

    fn map(&self, dataset: &Dataset, f: impl Fn(f64, usize) -> f64) -> Dataset {
        let d = dataset.d();
        let values = dataset
            .values()
            .iter()
            .zip(dataset.mask())
            .enumerate()
            .map(|(k, (&v, &m))| if m { v } else { f(v, k % d) })
            .collect();
        let mut out = dataset.clone();
        out.values = values;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Dataset> {
        read_csv(s.as_bytes(), &CsvOptions::default())
    }

    #[test]
    fn csv_default_markers() {
        let ds = parse("1,2\n3,\n").unwrap();
        assert_eq!((ds.n(), ds.d()), (2, 2));
        assert_eq!(ds.mask(), &[false, false, false, true]);
        assert!(ds.row(1)[1].is_nan());

        let ds = parse("1,NA\n2,3\n").unwrap();
        assert_eq!(ds.mask(), &[false, true, false, false]);
    }

    #[test]
    fn csv_parse_error_location() {
        match parse("1,x\n") {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (0, 1)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("1,2\n3\n"), Err(Error::RaggedRows { row: 1, .. })));
    }

    #[test]
    fn csv_markers_are_case_sensitive() {
        assert!(parse("na,1\n").is_err());
        let opts = CsvOptions {
            missing_markers: vec!["?".into()],
            has_header: true,
        };
        let ds = read_csv("a,b\n?,1\n".as_bytes(), &opts).unwrap();
        assert_eq!(ds.column_names().unwrap(), &["a".to_string(), "b".to_string()]);
        assert_eq!(ds.mask(), &[true, false]);
    }

    #[test]
    fn csv_round_trip() {
        let ds = parse("1.5,,3\n0.1,2,-7e-3\n").unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf, false).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.mask(), ds.mask());
        for i in 0..2 {
            for c in 0..3 {
                assert_eq!(back.get(i, c), ds.get(i, c));
            }
        }
    }

    #[test]
    fn mcar_fraction_and_determinism() {
        let ds = Dataset::complete(100, 100, vec![1.0; 10_000]).unwrap();
        assert_eq!(mask_mcar(&ds, 0.0, 1).unwrap(), ds);
        let a = mask_mcar(&ds, 0.3, 7).unwrap();
        let b = mask_mcar(&ds, 0.3, 7).unwrap();
        assert_eq!(a.mask(), b.mask());
        // Binomial(10000, 0.3): sd ≈ 45.8, 4 sd ≈ 183.
        let k = a.missing_count() as f64;
        assert!((k - 3000.0).abs() < 4.0 * (10_000.0f64 * 0.3 * 0.7).sqrt(), "{k}");
        assert!(mask_mcar(&ds, 1.0, 1).is_err());
    }

    #[test]
    fn mcar_respects_column_subset() {
        let ds = Dataset::complete(50, 3, vec![0.5; 150]).unwrap();
        let m = mask_mcar_columns(&ds, 0.5, 3, &[0, 1]).unwrap();
        assert!((0..50).all(|i| !m.is_missing(i, 2)));
        assert!(m.missing_count() > 0);
    }

    #[test]
    fn square_masks() {
        let ds = Dataset::complete(5, 16, vec![0.0; 80]).unwrap();
        let full = mask_square(&ds, 4, 4, 4, 1).unwrap();
        assert!(full.is_complete() == false && full.missing_count() == 80);
        let m = mask_square(&ds, 4, 4, 2, 9).unwrap();
        for i in 0..5 {
            let cells: Vec<usize> = (0..16).filter(|&c| m.is_missing(i, c)).collect();
            assert_eq!(cells.len(), 4);
            let (y0, x0) = (cells[0] / 4, cells[0] % 4);
            let want = vec![y0 * 4 + x0, y0 * 4 + x0 + 1, (y0 + 1) * 4 + x0, (y0 + 1) * 4 + x0 + 1];
            assert_eq!(cells, want);
        }
        assert!(matches!(mask_square(&ds, 3, 5, 2, 1), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn runs_are_contiguous() {
        let ds = Dataset::complete(40, 20, vec![0.0; 800]).unwrap();
        let m = mask_runs(&ds, 6, 2).unwrap();
        for i in 0..40 {
            let cells: Vec<usize> = (0..20).filter(|&c| m.is_missing(i, c)).collect();
            assert!(!cells.is_empty() && cells.len() <= 6);
            assert_eq!(cells.last().unwrap() - cells[0] + 1, cells.len());
        }
    }

    #[test]
    fn mixture_generator() {
        let (a, truth) = gen_mixture(10_000, 3, 1, 2.0, 5).unwrap();
        let (b, _) = gen_mixture(10_000, 3, 1, 2.0, 5).unwrap();
        assert_eq!(a, b);
        let (mean, _) = a.complete_moments().unwrap();
        for c in 0..3 {
            let sd = truth.covariances[0][c][c].sqrt();
            assert!((mean[c] - truth.means[0][c]).abs() < 5.0 * sd / 100.0);
        }
        let (small, t) = gen_mixture(3, 2, 3, 1.0, 1).unwrap();
        assert_eq!(small.n(), 3);
        assert_eq!(t.labels, vec![0, 1, 2]);
        assert!(gen_mixture(2, 2, 3, 1.0, 1).is_err());
    }

    #[test]
    fn normalizer_examples() {
        let ds = Dataset::complete(2, 2, vec![0.0, 5.0, 2.0, 5.0]).unwrap();
        let norm = fit_normalizer(&ds, &[0, 1]).unwrap();
        let z = norm.normalize(&ds);
        assert_eq!(z.values(), &[-1.0, 0.0, 1.0, 0.0]);
        assert_eq!(norm.std[1], 1.0);

        let ds = parse("1.5,\n-2,4\n7.25,1e3\n").unwrap();
        let norm = fit_normalizer(&ds, &[0, 1, 2]).unwrap();
        let back = norm.denormalize(&norm.normalize(&ds));
        for i in 0..3 {
            for c in 0..2 {
                match (back.get(i, c), ds.get(i, c)) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                    (None, None) => {}
                    _ => panic!("mask changed"),
                }
            }
        }
        assert!(fit_normalizer(&ds, &[]).is_err());
    }
}
