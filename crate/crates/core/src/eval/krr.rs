//! Kernel ridge regression.
//!
//! Linear and polynomial kernels have finite feature maps; when the feature
//! count is below the number of training rows the ridge system is solved in
//! feature space, otherwise (and for the Gaussian kernel) in the dual. Both
//! give the same predictor.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Kernel {
    /// `⟨x, x'⟩`
    Linear,
    /// `exp(−‖x − x'‖² / (2 bandwidth²))`
    Gaussian { bandwidth: f64 },
    /// `(scale ⟨x, x'⟩ + 1)^degree`
    Polynomial { degree: u32, scale: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => dot(a, b),
            Kernel::Gaussian { bandwidth } => {
                let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            }
            Kernel::Polynomial { degree, scale } => (scale * dot(a, b) + 1.0).powi(degree as i32),
        }
    }
}

/// faer's SIMD kernels can leave the upper halves of the AVX registers dirty,
/// after which every legacy-SSE instruction (libm `exp` included) pays a
/// transition penalty on many x86 cores. Clearing them restores full speed.
fn settle() {
    #[cfg(target_arch = "x86_64")]
    {
        #[target_feature(enable = "avx")]
        unsafe fn zero_upper() {
            std::arch::x86_64::_mm256_zeroupper();
        }
        if std::arch::is_x86_feature_detected!("avx") {
            // SAFETY: the CPU supports AVX, checked above.
            unsafe { zero_upper() }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kernel: Kernel,
    /// Ridge weight `λ` added to the kernel diagonal.
    pub lambda: f64,
}

impl KernelSpec {
    pub fn new(kernel: Kernel, lambda: f64) -> Result<Self> {
        let spec = Self { kernel, lambda };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda >= 0.0
            && match self.kernel {
                Kernel::Linear => true,
                Kernel::Gaussian { bandwidth } => bandwidth > 0.0,
                Kernel::Polynomial { degree, scale } => degree >= 1 && scale > 0.0,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid kernel spec {self}")))
        }
    }
}

impl std::fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kernel {
            Kernel::Linear => write!(f, "linear(lambda={:e})", self.lambda),
            Kernel::Gaussian { bandwidth } => write!(f, "gaussian(bandwidth={bandwidth}, lambda={:e})", self.lambda),
            Kernel::Polynomial { degree, scale } => {
                write!(f, "polynomial(degree={degree}, scale={scale}, lambda={:e})", self.lambda)
            }
        }
    }
}

pub const GRID_LAMBDAS: [f64; 5] = [1e-8, 1e-6, 1e-4, 1e-2, 1.0];
pub const GRID_BANDWIDTHS: [f64; 9] = [100.0, 50.0, 10.0, 5.0, 1.0, 0.5, 0.1, 0.05, 0.01];
pub const GRID_DEGREES: [u32; 5] = [1, 2, 3, 4, 5];
pub const GRID_SCALES: [f64; 7] = [0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0];

/// The full hyper-parameter grid: every kernel crossed with every `λ`, `λ` varying fastest.
pub fn default_grid() -> Vec<KernelSpec> {
    let mut kernels = vec![Kernel::Linear];
    kernels.extend(GRID_BANDWIDTHS.iter().map(|&bandwidth| Kernel::Gaussian { bandwidth }));
    for &degree in &GRID_DEGREES {
        kernels.extend(GRID_SCALES.iter().map(|&scale| Kernel::Polynomial { degree, scale }));
    }
    kernels
        .into_iter()
        .flat_map(|kernel| GRID_LAMBDAS.iter().map(move |&lambda| KernelSpec { kernel, lambda }))
        .collect()
}

/// Where the ridge system is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    /// Feature space when it is smaller than the training set, else the dual.
    Auto,
    Dual,
}

#[derive(Debug, Clone)]
enum Fitted {
    /// Weights over [`Monomials`] columns, already multiplied by the feature scaling.
    Primal { monomials: Monomials, weights: Vec<f64> },
    Dual { train: Mat<f64>, alpha: Vec<f64> },
}

/// A fitted kernel ridge regressor.
#[derive(Debug, Clone)]
pub struct Krr {
    pub spec: KernelSpec,
    fitted: Fitted,
}

/// Fits on the rows of `x` (`n × p`).
pub fn krr_fit(x: MatRef<'_, f64>, y: &[f64], spec: KernelSpec, solver: Solver) -> Result<Krr> {
    spec.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let fitted = match (solver, primal_degree(&spec)) {
        (Solver::Auto, Some(degree)) if Monomials::count(x.ncols(), degree) < x.nrows() => {
            let monomials = Monomials::new(x.ncols(), degree);
            let m = monomials.eval(x);
            let gram = m.transpose() * &m;
            let my = m.transpose() * col(y);
            let scaling = monomials.scaling(&spec.kernel);
            let weights = solve_primal(gram.as_ref(), my.as_ref(), &scaling, spec.lambda)?;
            Fitted::Primal { monomials, weights }
        }
        _ => {
            let k = kernel_matrix(&spec.kernel, x, x);
            let alpha = solve_dual(k.as_ref(), y, spec.lambda)?;
            Fitted::Dual {
                train: x.to_owned(),
                alpha,
            }
        }
    };
    Ok(Krr { spec, fitted })
}

impl Krr {
    pub fn predict(&self, x: MatRef<'_, f64>) -> Vec<f64> {
        match &self.fitted {
            Fitted::Primal { monomials, weights } => {
                let m = monomials.eval(x);
                let out = (&m * col(weights)).col(0).iter().copied().collect();
                settle();
                out
            }
            Fitted::Dual { train, alpha } => {
                let k = kernel_matrix(&self.spec.kernel, x, train.as_ref());
                let out = (&k * col(alpha)).col(0).iter().copied().collect();
                settle();
                out
            }
        }
    }

    pub fn is_primal(&self) -> bool {
        matches!(self.fitted, Fitted::Primal { .. })
    }
}

pub fn mse(pred: &[f64], y: &[f64]) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n
}

fn col(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

fn primal_degree(spec: &KernelSpec) -> Option<u32> {
    match spec.kernel {
        Kernel::Linear => Some(1),
        Kernel::Polynomial { degree, .. } => Some(degree),
        Kernel::Gaussian { .. } => None,
    }
}

/// Gaussian kernel entries below this are stored as zero. The change is far
/// below the rounding of the unit diagonal, and it keeps products formed during
/// factorization out of the subnormal range, where arithmetic is ~100x slower.
const NEGLIGIBLE: f64 = 1e-30;

/// `K[i, j] = k(a_i, b_j)`.
pub fn kernel_matrix(kernel: &Kernel, a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let inner = a * b.transpose();
    settle();
    match *kernel {
        Kernel::Linear => inner,
        Kernel::Polynomial { degree, scale } => {
            Mat::from_fn(a.nrows(), b.nrows(), |i, j| (scale * inner[(i, j)] + 1.0).powi(degree as i32))
        }
        Kernel::Gaussian { bandwidth } => {
            let na: Vec<f64> = (0..a.nrows()).map(|i| a.row(i).iter().map(|v| v * v).sum()).collect();
            let nb: Vec<f64> = (0..b.nrows()).map(|i| b.row(i).iter().map(|v| v * v).sum()).collect();
            let g = 1.0 / (2.0 * bandwidth * bandwidth);
            Mat::from_fn(a.nrows(), b.nrows(), |i, j| {
                let sq = (na[i] + nb[j] - 2.0 * inner[(i, j)]).max(0.0);
                let v = (-g * sq).exp();
                if v < NEGLIGIBLE {
                    0.0
                } else {
                    v
                }
            })
        }
    }
}

fn solve_dual(k: MatRef<'_, f64>, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let mut a = k.to_owned();
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    llt_solve(a, col(y))
}

/// Solves `A x = rhs` for SPD `A` (lower triangle read), factoring in place.
fn llt_solve(mut a: Mat<f64>, mut rhs: Mat<f64>) -> Result<Vec<f64>> {
    use faer::dyn_stack::{MemBuffer, MemStack};
    use faer::linalg::cholesky::llt::{factor, solve};
    let par = faer::get_global_parallelism();
    let mut buf = MemBuffer::new(factor::cholesky_in_place_scratch::<f64>(a.nrows(), par, Default::default()));
    let stack = MemStack::new(&mut buf);
    let factored = factor::cholesky_in_place(a.as_mut(), Default::default(), par, stack, Default::default());
    if factored.is_ok() {
        solve::solve_in_place(a.as_ref(), rhs.as_mut(), par, stack);
    }
    settle();
    factored.map_err(|_| Error::SingularSystem)?;
    finite(rhs.col(0).iter().copied().collect())
}

/// Solves `(C G C + λI) w = C My` and returns `C w`, the weights on unscaled monomials.
fn solve_primal(gram: MatRef<'_, f64>, my: MatRef<'_, f64>, scaling: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let dim = scaling.len();
    let a = Mat::from_fn(dim, dim, |i, j| {
        let v = scaling[i] * scaling[j] * gram[(i, j)];
        if i == j {
            v + lambda
        } else {
            v
        }
    });
    let b = Mat::from_fn(dim, 1, |i, _| scaling[i] * my[(i, 0)]);
    let w = llt_solve(a, b)?;
    finite((0..dim).map(|i| scaling[i] * w[i]).collect())
}

fn finite(v: Vec<f64>) -> Result<Vec<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::SingularSystem)
    }
}

/// All monomials of total degree `≤ degree`, ordered by degree so that every
/// lower-degree set is a prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomials {
    /// Variable indices of each monomial, non-decreasing.
    terms: Vec<Vec<usize>>,
    degree: u32,
}

impl Monomials {
    pub fn new(vars: usize, degree: u32) -> Self {
        let mut terms = vec![Vec::new()];
        let mut layer: Vec<Vec<usize>> = vec![Vec::new()];
        for _ in 0..degree {
            let mut next = Vec::new();
            for t in &layer {
                let from = t.last().copied().unwrap_or(0);
                for v in from..vars {
                    let mut u = t.clone();
                    u.push(v);
                    next.push(u);
                }
            }
            terms.extend(next.iter().cloned());
            layer = next;
        }
        Self { terms, degree }
    }

    /// `C(vars + degree, degree)`.
    pub fn count(vars: usize, degree: u32) -> usize {
        let mut c: u128 = 1;
        for k in 1..=degree as u128 {
            c = c * (vars as u128 + k) / k;
        }
        c.min(usize::MAX as u128) as usize
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Number of leading monomials with degree `≤ degree`.
    pub fn prefix(&self, degree: u32) -> usize {
        self.terms.iter().take_while(|t| t.len() as u32 <= degree).count()
    }

    /// Unscaled monomial values, `n × len`.
    pub fn eval(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        Mat::from_fn(x.nrows(), self.terms.len(), |i, k| self.terms[k].iter().map(|&v| x[(i, v)]).product())
    }

    /// Feature scaling `c_α` such that `Σ_α c_α² x^α x'^α` reproduces `kernel`.
    pub fn scaling(&self, kernel: &Kernel) -> Vec<f64> {
        match *kernel {
            Kernel::Linear => self.terms.iter().map(|t| if t.len() == 1 { 1.0 } else { 0.0 }).collect(),
            Kernel::Polynomial { degree, scale } => self
                .terms
                .iter()
                .map(|t| {
                    let k = t.len() as u32;
                    if k > degree {
                        return 0.0;
                    }
                    let mut coef = factorial(degree) / factorial(degree - k);
                    let mut run = 1u32;
                    for w in t.windows(2) {
                        if w[0] == w[1] {
                            run += 1;
                        } else {
                            coef /= factorial(run);
                            run = 1;
                        }
                    }
                    if k > 0 {
                        coef /= factorial(run);
                    }
                    (coef * scale.powi(k as i32)).sqrt()
                })
                .collect(),
            Kernel::Gaussian { .. } => panic!("the Gaussian kernel has no finite feature map"),
        }
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// Outcome of a validation sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub best: KernelSpec,
    pub validation_mse: f64,
    /// Validation MSE of every grid entry (infinite where the system could not be solved).
    pub scores: Vec<f64>,
}

/// Evaluates every spec on the validation rows and returns the lowest
/// validation MSE; the earliest entry wins ties.
pub fn grid_select(
    x_train: MatRef<'_, f64>,
    y_train: &[f64],
    x_val: MatRef<'_, f64>,
    y_val: &[f64],
    grid: &[KernelSpec],
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty kernel grid".into()));
    }
    if y_val.is_empty() {
        return Err(Error::InvalidConfig("validation split is empty".into()));
    }
    for s in grid {
        s.validate()?;
    }
    let n = x_train.nrows();
    let p = x_train.ncols();
    let max_primal = grid
        .iter()
        .filter_map(primal_degree)
        .filter(|&deg| Monomials::count(p, deg) < n)
        .max();
    let cache = max_primal.map(|deg| {
        let monomials = Monomials::new(p, deg);
        let m = monomials.eval(x_train);
        PrimalCache {
            gram: m.transpose() * &m,
            my: m.transpose() * col(y_train),
            m_val: monomials.eval(x_val),
            monomials,
        }
    });

    let mut scores = Vec::with_capacity(grid.len());
    let mut dual: Option<(Kernel, Mat<f64>, Mat<f64>)> = None;
    for spec in grid {
        let primal = primal_degree(spec).filter(|&deg| Monomials::count(p, deg) < n);
        let pred = match (primal, &cache) {
            (Some(deg), Some(c)) => {
                let dim = c.monomials.prefix(deg);
                let scaling = &c.monomials.scaling(&spec.kernel)[..dim];
                solve_primal(
                    c.gram.as_ref().submatrix(0, 0, dim, dim),
                    c.my.as_ref().submatrix(0, 0, dim, 1),
                    scaling,
                    spec.lambda,
                )
                .map(|w| (c.m_val.as_ref().submatrix(0, 0, x_val.nrows(), dim) * col(&w)).col(0).iter().copied().collect::<Vec<f64>>())
            }
            _ => {
                if dual.as_ref().is_none_or(|(k, _, _)| *k != spec.kernel) {
                    dual = Some((
                        spec.kernel,
                        kernel_matrix(&spec.kernel, x_train, x_train),
                        kernel_matrix(&spec.kernel, x_val, x_train),
                    ));
                }
                let (_, k, kv) = dual.as_ref().unwrap();
                solve_dual(k.as_ref(), y_train, spec.lambda).map(|a| (kv * col(&a)).col(0).iter().copied().collect())
            }
        };
        settle();
        let score = match pred {
            Ok(pred) => {
                let e = mse(&pred, y_val);
                if e.is_finite() {
                    e
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        };
        scores.push(score);
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    if !scores[best].is_finite() {
        return Err(Error::SingularSystem);
    }
    Ok(GridResult {
        best: grid[best],
        validation_mse: scores[best],
        scores,
    })
}

struct PrimalCache {
    monomials: Monomials,
    gram: Mat<f64>,
    my: Mat<f64>,
    m_val: Mat<f64>,
}
