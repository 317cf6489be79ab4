//! Zero-mean Gaussian-process regression with ARD stationary kernels.
//!
//! Targets are standardized to zero mean and unit variance before fitting;
//! every quantity computed here lives in standardized units unless the field
//! name says otherwise. The kernel matrix is factorized once per
//! hyperparameter setting ([`factorize`]) and the factor is reused for the
//! marginal likelihood, predictions and acquisition values.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal jitter ladder, in units of the kernel variance.
pub const JITTER_LADDER: [f64; 5] = [0.0, 1e-8, 1e-6, 1e-4, 1e-2];

/// Observation noise used for noise-free objectives (standardized units).
pub const DEFAULT_NOISE_VARIANCE: f64 = 1e-6;

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    #[default]
    Rbf,
    Matern52,
}

impl Kernel {
    /// Unit-variance correlation as a function of the scaled squared distance
    /// `r2 = Σ ρ_i (x_i - y_i)²`.
    #[inline]
    pub fn correlation(self, r2: f64) -> f64 {
        match self {
            Kernel::Rbf => (-0.5 * r2).exp(),
            Kernel::Matern52 => {
                let r = r2.max(0.0).sqrt();
                (1.0 + SQRT5 * r + 5.0 * r2 / 3.0) * (-SQRT5 * r).exp()
            }
        }
    }

    /// Derivative of [`Kernel::correlation`] with respect to `r2`.
    #[inline]
    pub fn correlation_deriv(self, r2: f64) -> f64 {
        match self {
            Kernel::Rbf => -0.5 * (-0.5 * r2).exp(),
            Kernel::Matern52 => {
                let r = r2.max(0.0).sqrt();
                -(5.0 / 6.0) * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp()
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Rbf => "rbf",
            Kernel::Matern52 => "matern52",
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbf" => Ok(Kernel::Rbf),
            "matern52" => Ok(Kernel::Matern52),
            other => Err(Error::InvalidInput(format!("unknown kernel `{other}`"))),
        }
    }
}

/// One realization of the GP hyperparameters.
///
/// `inv_sq_lengthscales` are the effective values `ρ_i = τ·ρ̃_i`. Models
/// without a global shrinkage level store `global_shrinkage = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaasHyperparameters {
    pub kernel_variance: f64,
    pub global_shrinkage: f64,
    pub inv_sq_lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl SaasHyperparameters {
    pub fn new(
        kernel_variance: f64,
        global_shrinkage: f64,
        inv_sq_lengthscales: Vec<f64>,
        noise_variance: f64,
    ) -> Result<Self> {
        let hyper = Self {
            kernel_variance,
            global_shrinkage,
            inv_sq_lengthscales,
            noise_variance,
        };
        hyper.validate()?;
        Ok(hyper)
    }

    pub fn dim(&self) -> usize {
        self.inv_sq_lengthscales.len()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.kernel_variance)
            || !positive(self.global_shrinkage)
            || !positive(self.noise_variance)
            || self.inv_sq_lengthscales.is_empty()
            || !self.inv_sq_lengthscales.iter().all(|&r| positive(r))
        {
            return Err(Error::InvalidInput(format!(
                "hyperparameters must be finite and strictly positive: {self:?}"
            )));
        }
        Ok(())
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found,
            });
        }
        Ok(())
    }
}

/// Scaled squared distance `Σ ρ_i (x_i - y_i)²`.
#[inline]
pub fn scaled_sq_dist(x: &[f64], y: &[f64], rho: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(rho)
        .map(|((a, b), r)| {
            let d = a - b;
            r * d * d
        })
        .sum()
}

/// Kernel value `σ_k² κ(r²)` with dimension checks.
pub fn kernel_value(kernel: Kernel, x: &[f64], y: &[f64], psi: &SaasHyperparameters) -> Result<f64> {
    psi.check_dim(x.len())?;
    psi.check_dim(y.len())?;
    let r2 = scaled_sq_dist(x, y, &psi.inv_sq_lengthscales);
    Ok(psi.kernel_variance * kernel.correlation(r2))
}

pub fn rbf_kernel(x: &[f64], y: &[f64], psi: &SaasHyperparameters) -> Result<f64> {
    kernel_value(Kernel::Rbf, x, y, psi)
}

pub fn matern52_kernel(x: &[f64], y: &[f64], psi: &SaasHyperparameters) -> Result<f64> {
    kernel_value(Kernel::Matern52, x, y, psi)
}

/// Collected query points and their objective values (`H_t`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationHistory {
    dim: usize,
    /// Row-major `N × D`.
    x: Vec<f64>,
    y_raw: Vec<f64>,
    y_std: Vec<f64>,
    mean: f64,
    scale: f64,
}

impl EvaluationHistory {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            x: Vec::new(),
            y_raw: Vec::new(),
            y_std: Vec::new(),
            mean: 0.0,
            scale: 1.0,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidInput("history needs at least one row".into()))?;
        if rows.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                found: y.len(),
            });
        }
        let mut history = Self::new(dim);
        for (row, &value) in rows.iter().zip(y) {
            history.push_unstandardized(row, value)?;
        }
        history.restandardize();
        Ok(history)
    }

    pub fn push(&mut self, x: &[f64], y: f64) -> Result<()> {
        self.push_unstandardized(x, y)?;
        self.restandardize();
        Ok(())
    }

    fn push_unstandardized(&mut self, x: &[f64], y: f64) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        if !x.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(format!("query point outside the unit cube: {x:?}")));
        }
        if !y.is_finite() {
            return Err(Error::InvalidInput(format!("objective value is not finite: {y}")));
        }
        self.x.extend_from_slice(x);
        self.y_raw.push(y);
        Ok(())
    }

    fn restandardize(&mut self) {
        let n = self.y_raw.len();
        self.mean = if n == 0 {
            0.0
        } else {
            self.y_raw.iter().sum::<f64>() / n as f64
        };
        self.scale = if n < 2 {
            1.0
        } else {
            let var = self.y_raw.iter().map(|y| (y - self.mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        };
        self.y_std = self.y_raw.iter().map(|y| (y - self.mean) / self.scale).collect();
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.y_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_raw.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.dim.max(1))
    }

    pub fn y_raw(&self) -> &[f64] {
        &self.y_raw
    }

    pub fn y_std(&self) -> &[f64] {
        &self.y_std
    }

    /// `(mean, scale)` with `y_std = (y_raw - mean) / scale`.
    pub fn standardization(&self) -> (f64, f64) {
        (self.mean, self.scale)
    }

    pub fn to_std(&self, y: f64) -> f64 {
        (y - self.mean) / self.scale
    }

    pub fn from_std(&self, v: f64) -> f64 {
        v * self.scale + self.mean
    }

    /// Index and raw value of the best (smallest) observation.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.y_raw
            .iter()
            .copied()
            .enumerate()
            .fold(None, |acc, (i, y)| match acc {
                Some((_, best)) if best <= y => acc,
                _ => Some((i, y)),
            })
    }

    /// Minimum of the standardized targets.
    pub fn y_min_std(&self) -> f64 {
        self.y_std.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Copy of this history with an explicit standardization, used to score
    /// held-out data in the units of a training set.
    pub fn with_standardization(&self, mean: f64, scale: f64) -> Self {
        let mut out = self.clone();
        out.mean = mean;
        out.scale = scale;
        out.y_std = out.y_raw.iter().map(|y| (y - mean) / scale).collect();
        out
    }

    /// Copy with row `skip` removed, keeping the current standardization.
    pub fn without_row(&self, skip: usize) -> Self {
        let mut out = Self::new(self.dim);
        for i in (0..self.len()).filter(|&i| i != skip) {
            out.x.extend_from_slice(self.row(i));
            out.y_raw.push(self.y_raw[i]);
            out.y_std.push(self.y_std[i]);
        }
        out.mean = self.mean;
        out.scale = self.scale;
        out
    }
}

/// Per-dimension squared differences of every training pair `i < j`,
/// cached once per dataset for repeated likelihood evaluations.
#[derive(Debug, Clone)]
pub struct PairwiseSqDiffs {
    n: usize,
    dim: usize,
    /// `pairs × dim`, pairs enumerated row-wise over the strict upper triangle.
    data: Vec<f64>,
}

impl PairwiseSqDiffs {
    pub fn new(history: &EvaluationHistory) -> Self {
        let n = history.len();
        let dim = history.dim();
        let mut data = Vec::with_capacity(n * n.saturating_sub(1) / 2 * dim);
        for i in 0..n {
            let xi = history.row(i);
            for j in (i + 1)..n {
                data.extend(xi.iter().zip(history.row(j)).map(|(a, b)| (a - b) * (a - b)));
            }
        }
        Self { n, dim, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn pair(&self, p: usize) -> &[f64] {
        &self.data[p * self.dim..(p + 1) * self.dim]
    }

    /// Noise-free kernel matrix and the matrix of `σ_k² κ'(r²)` values.
    fn kernel_and_deriv(&self, psi: &SaasHyperparameters, kernel: Kernel) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.n;
        let sk = psi.kernel_variance;
        let rho = &psi.inv_sq_lengthscales;
        let mut k = DMatrix::zeros(n, n);
        let mut g = DMatrix::zeros(n, n);
        let mut p = 0;
        for i in 0..n {
            k[(i, i)] = sk;
            g[(i, i)] = sk * kernel.correlation_deriv(0.0);
            for j in (i + 1)..n {
                let r2: f64 = self.pair(p).iter().zip(rho).map(|(s, r)| s * r).sum();
                let kv = sk * kernel.correlation(r2);
                let gv = sk * kernel.correlation_deriv(r2);
                k[(i, j)] = kv;
                k[(j, i)] = kv;
                g[(i, j)] = gv;
                g[(j, i)] = gv;
                p += 1;
            }
        }
        (k, g)
    }
}

/// Noise-free kernel matrix `K_XX`.
pub fn kernel_matrix(history: &EvaluationHistory, psi: &SaasHyperparameters, kernel: Kernel) -> Result<DMatrix<f64>> {
    psi.check_dim(history.dim())?;
    let n = history.len();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let r2 = scaled_sq_dist(history.row(i), history.row(j), &psi.inv_sq_lengthscales);
        psi.kernel_variance * kernel.correlation(r2)
    }))
}

/// Cholesky factor of `K + (σ² + jitter) I` and the solved targets.
#[derive(Debug, Clone)]
pub struct GpFactorization {
    kernel: Kernel,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpFactorization {
    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `(K + (σ² + jitter) I)⁻¹ y_std`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Absolute diagonal jitter that was added on top of the noise variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// Solves `L v = b` in place.
    pub fn solve_lower_mut(&self, b: &mut DVector<f64>) {
        self.chol.l_dirty().solve_lower_triangular_unchecked_mut(b);
    }
}

fn factorize_matrix(
    mut k: DMatrix<f64>,
    y: &[f64],
    psi: &SaasHyperparameters,
    kernel: Kernel,
) -> Result<GpFactorization> {
    let n = k.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("cannot factorize an empty history".into()));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteModel(format!("kernel matrix is not finite for {psi:?}")));
    }
    for i in 0..n {
        k[(i, i)] += psi.noise_variance;
    }
    let mut applied = 0.0;
    for rel in JITTER_LADDER {
        let jitter = rel * psi.kernel_variance;
        let mut attempt = k.clone();
        for i in 0..n {
            attempt[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(attempt) {
            let diag_ok = chol.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0);
            if diag_ok {
                let alpha = chol.solve(&DVector::from_column_slice(y));
                if alpha.iter().all(|a| a.is_finite()) {
                    return Ok(GpFactorization {
                        kernel,
                        chol,
                        alpha,
                        jitter,
                    });
                }
            }
        }
        applied = jitter;
    }
    Err(Error::NonFiniteModel(format!(
        "Cholesky factorization failed up to jitter {applied:e} for {psi:?}"
    )))
}

/// Factorizes `K + σ² I`, escalating diagonal jitter through [`JITTER_LADDER`].
pub fn factorize(history: &EvaluationHistory, psi: &SaasHyperparameters, kernel: Kernel) -> Result<GpFactorization> {
    let k = kernel_matrix(history, psi, kernel)?;
    factorize_matrix(k, history.y_std(), psi, kernel)
}

fn mll_from_factor(fact: &GpFactorization, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let fit: f64 = y.iter().zip(fact.alpha.iter()).map(|(a, b)| a * b).sum();
    -0.5 * fit - 0.5 * fact.log_det() - 0.5 * n * (2.0 * PI).ln()
}

/// `log N(y_std | 0, K + σ² I)`.
pub fn marginal_log_likelihood(history: &EvaluationHistory, psi: &SaasHyperparameters, kernel: Kernel) -> Result<f64> {
    let fact = factorize(history, psi, kernel)?;
    Ok(mll_from_factor(&fact, history.y_std()))
}

/// Partial derivatives of the marginal log likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct MllGradient {
    /// With respect to `log σ_k²`.
    pub log_kernel_variance: f64,
    /// With respect to each `ρ_i` (not its logarithm).
    pub inv_sq_lengthscales: Vec<f64>,
    /// With respect to `log σ²`.
    pub log_noise_variance: f64,
}

/// Marginal log likelihood, its gradient and the factorization it used.
///
/// With `W = ααᵀ - (K + σ²I)⁻¹`, each partial is `½ tr(W ∂K)`.
pub fn mll_and_gradient(
    history: &EvaluationHistory,
    diffs: &PairwiseSqDiffs,
    psi: &SaasHyperparameters,
    kernel: Kernel,
) -> Result<(f64, MllGradient, GpFactorization)> {
    psi.check_dim(history.dim())?;
    if diffs.n() != history.len() {
        return Err(Error::DimensionMismatch {
            expected: history.len(),
            found: diffs.n(),
        });
    }
    let (k, g) = diffs.kernel_and_deriv(psi, kernel);
    let fact = factorize_matrix(k.clone(), history.y_std(), psi, kernel)?;
    let value = mll_from_factor(&fact, history.y_std());
    if !value.is_finite() {
        return Err(Error::NonFiniteModel(format!("marginal likelihood is {value} for {psi:?}")));
    }

    let n = history.len();
    let c = fact.inverse();
    let alpha = &fact.alpha;
    let w = |i: usize, j: usize| alpha[i] * alpha[j] - c[(i, j)];

    let mut trace_w = 0.0;
    let mut wk = 0.0;
    for i in 0..n {
        let wii = w(i, i);
        trace_w += wii;
        wk += wii * k[(i, i)];
        for j in (i + 1)..n {
            wk += 2.0 * w(i, j) * k[(i, j)];
        }
    }

    let dim = history.dim();
    let mut d_rho = vec![0.0; dim];
    let mut p = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let m = w(i, j) * g[(i, j)];
            if m != 0.0 {
                for (acc, s) in d_rho.iter_mut().zip(diffs.pair(p)) {
                    *acc += m * s;
                }
            }
            p += 1;
        }
    }

    let grad = MllGradient {
        // The jitter is proportional to σ_k², so it scales with it.
        log_kernel_variance: 0.5 * (wk + fact.jitter * trace_w),
        inv_sq_lengthscales: d_rho,
        log_noise_variance: 0.5 * psi.noise_variance * trace_w,
    };
    Ok((value, grad, fact))
}

/// Posterior predictive moments at one query point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpPrediction {
    /// Raw objective units.
    pub mean: f64,
    /// Raw objective units squared.
    pub variance: f64,
    pub mean_std: f64,
    pub variance_std: f64,
}

/// Cross-covariances `k(x*, x_n)` and scaled distances for one query point.
pub(crate) fn cross_covariance(
    x_star: &[f64],
    history: &EvaluationHistory,
    psi: &SaasHyperparameters,
    kernel: Kernel,
) -> (DVector<f64>, Vec<f64>) {
    let n = history.len();
    let mut r2s = Vec::with_capacity(n);
    let k = DVector::from_iterator(
        n,
        history.rows().map(|row| {
            let r2 = scaled_sq_dist(x_star, row, &psi.inv_sq_lengthscales);
            r2s.push(r2);
            psi.kernel_variance * kernel.correlation(r2)
        }),
    );
    (k, r2s)
}

/// Predictive mean and latent-function variance in standardized units,
/// before clamping the variance.
pub(crate) fn predict_std_unclamped(
    x_star: &[f64],
    history: &EvaluationHistory,
    psi: &SaasHyperparameters,
    fact: &GpFactorization,
) -> (f64, f64) {
    let (k, _) = cross_covariance(x_star, history, psi, fact.kernel);
    let mean = k.dot(&fact.alpha);
    let mut v = k;
    fact.solve_lower_mut(&mut v);
    (mean, psi.kernel_variance - v.norm_squared())
}

pub fn predict(
    x_star: &[f64],
    history: &EvaluationHistory,
    psi: &SaasHyperparameters,
    fact: &GpFactorization,
) -> Result<GpPrediction> {
    psi.check_dim(x_star.len())?;
    psi.check_dim(history.dim())?;
    let (mean_std, var) = predict_std_unclamped(x_star, history, psi, fact);
    let variance_std = var.max(0.0);
    let (mean, scale) = history.standardization();
    Ok(GpPrediction {
        mean: mean_std * scale + mean,
        variance: variance_std * scale * scale,
        mean_std,
        variance_std,
    })
}
