//! Sparse axis-aligned subspace prior over GP hyperparameters.
//!
//! The hierarchy is
//!
//! ```text
//! σ_k² ~ LogNormal(0, 10²)
//! τ    ~ HalfCauchy(α)
//! ρ̃_i  ~ HalfCauchy(1),   ρ_i = τ·ρ̃_i
//! ```
//!
//! and inference runs in the unconstrained coordinates
//! `(log σ_k², log τ, log ρ̃_1, …, log ρ̃_D)`. The density in those
//! coordinates is the constrained density plus the log-Jacobian of the
//! exponential map, which is simply the sum of the coordinates.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{mll_and_gradient, EvaluationHistory, Kernel, PairwiseSqDiffs, SaasHyperparameters, DEFAULT_NOISE_VARIANCE};
use crate::nuts::LogDensity;
use crate::samples::PosteriorSampleSet;

/// Scale of the log-normal priors on the kernel (and optional noise) variance.
pub const LOG_NORMAL_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaasPriorConfig {
    /// Scale of the half-Cauchy prior on the global shrinkage.
    pub alpha: f64,
    /// Infer the observation noise under a LogNormal(0, 10²) prior instead
    /// of fixing it.
    pub noisy: bool,
}

impl Default for SaasPriorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            noisy: false,
        }
    }
}

impl SaasPriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

pub fn half_cauchy_log_density(v: f64, scale: f64) -> f64 {
    if v <= 0.0 || v.is_nan() {
        return f64::NEG_INFINITY;
    }
    let z = v / scale;
    (2.0 / (PI * scale)).ln() - z.mul_add(z, 1.0).ln()
}

pub fn normal_log_density(v: f64, mean: f64, sd: f64) -> f64 {
    let z = (v - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
}

pub fn log_normal_log_density(v: f64, mu: f64, sigma: f64) -> f64 {
    if v <= 0.0 || v.is_nan() {
        return f64::NEG_INFINITY;
    }
    normal_log_density(v.ln(), mu, sigma) - v.ln()
}

/// SAAS hyperparameters in unconstrained coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedState {
    pub log_kernel_variance: f64,
    pub log_tau: f64,
    pub log_rho_tilde: Vec<f64>,
    /// Present only when the noise variance is inferred.
    pub log_noise_variance: Option<f64>,
}

impl UnconstrainedState {
    /// Prior medians: `σ_k² = 1`, `τ = α`, `ρ̃_i = 1` (and `σ² = 1` if noisy).
    pub fn prior_median(dim: usize, config: &SaasPriorConfig) -> Self {
        Self {
            log_kernel_variance: 0.0,
            log_tau: config.alpha.ln(),
            log_rho_tilde: vec![0.0; dim],
            log_noise_variance: config.noisy.then_some(0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.log_rho_tilde.len()
    }

    pub fn from_hyperparameters(psi: &SaasHyperparameters, noisy: bool) -> Self {
        let log_tau = psi.global_shrinkage.ln();
        Self {
            log_kernel_variance: psi.kernel_variance.ln(),
            log_tau,
            log_rho_tilde: psi.inv_sq_lengthscales.iter().map(|r| r.ln() - log_tau).collect(),
            log_noise_variance: noisy.then(|| psi.noise_variance.ln()),
        }
    }

    /// Maps back to constrained values; a fixed noise model uses `noise_variance`.
    pub fn to_hyperparameters(&self, noise_variance: f64) -> SaasHyperparameters {
        let tau = self.log_tau.exp();
        SaasHyperparameters {
            kernel_variance: self.log_kernel_variance.exp(),
            global_shrinkage: tau,
            inv_sq_lengthscales: self.log_rho_tilde.iter().map(|u| (u + self.log_tau).exp()).collect(),
            noise_variance: self.log_noise_variance.map_or(noise_variance, f64::exp),
        }
    }

    /// Layout: `[log σ_k², log τ, log ρ̃_1..D, (log σ²)]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim() + 3);
        v.push(self.log_kernel_variance);
        v.push(self.log_tau);
        v.extend_from_slice(&self.log_rho_tilde);
        v.extend(self.log_noise_variance);
        v
    }

    pub fn from_slice(v: &[f64], dim: usize, noisy: bool) -> Result<Self> {
        let expected = dim + 2 + usize::from(noisy);
        if v.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: v.len(),
            });
        }
        Ok(Self {
            log_kernel_variance: v[0],
            log_tau: v[1],
            log_rho_tilde: v[2..2 + dim].to_vec(),
            log_noise_variance: noisy.then(|| v[2 + dim]),
        })
    }

    pub fn log_abs_det_jacobian(&self) -> f64 {
        self.log_kernel_variance
            + self.log_tau
            + self.log_rho_tilde.iter().sum::<f64>()
            + self.log_noise_variance.unwrap_or(0.0)
    }
}

/// Prior log density over the constrained coordinates `(σ_k², τ, ρ̃, [σ²])`.
pub fn log_prior(psi: &SaasHyperparameters, config: &SaasPriorConfig) -> f64 {
    let tau = psi.global_shrinkage;
    let mut lp = log_normal_log_density(psi.kernel_variance, 0.0, LOG_NORMAL_SCALE)
        + half_cauchy_log_density(tau, config.alpha);
    lp += psi
        .inv_sq_lengthscales
        .iter()
        .map(|r| half_cauchy_log_density(r / tau, 1.0))
        .sum::<f64>();
    if config.noisy {
        lp += log_normal_log_density(psi.noise_variance, 0.0, LOG_NORMAL_SCALE);
    }
    lp
}

/// Which density a [`ModelTarget`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Full SAAS hierarchy in unconstrained coordinates (NUTS target).
    Saas(SaasPriorConfig),
    /// MLL + log p(ψ | τ) at a fixed global shrinkage, in constrained
    /// coordinates without a Jacobian (the MAP objective).
    FixedShrinkage { tau: f64, noisy: bool },
    /// LogNormal(0, 10²) on every `1/ρ_i` and on `σ_k²`, unconstrained.
    WeakLogNormal,
    /// Marginal likelihood only.
    MaximumLikelihood,
}

impl ModelKind {
    fn noisy(&self) -> bool {
        match self {
            ModelKind::Saas(c) => c.noisy,
            ModelKind::FixedShrinkage { noisy, .. } => *noisy,
            _ => false,
        }
    }

    fn has_tau_coordinate(&self) -> bool {
        matches!(self, ModelKind::Saas(_))
    }
}

/// Differentiable log density over unconstrained GP hyperparameters.
///
/// Coordinates are `[log σ_k², (log τ), log ρ̃_1..D, (log σ²)]`, with the `τ`
/// slot present only for [`ModelKind::Saas`]. For the other kinds the
/// length-scale slots hold `log ρ_i` (`log ρ̃_i` for the fixed-shrinkage
/// objective, with `ρ_i = τ ρ̃_i`).
pub struct ModelTarget<'a> {
    history: &'a EvaluationHistory,
    diffs: PairwiseSqDiffs,
    kind: ModelKind,
    kernel: Kernel,
    noise_variance: f64,
}

impl<'a> ModelTarget<'a> {
    pub fn new(history: &'a EvaluationHistory, kind: ModelKind, kernel: Kernel) -> Result<Self> {
        if history.is_empty() {
            return Err(Error::InvalidInput("cannot fit a model to an empty history".into()));
        }
        if let ModelKind::Saas(c) = &kind {
            c.validate()?;
        }
        if let ModelKind::FixedShrinkage { tau, .. } = kind {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(Error::InvalidConfig(format!("fixed shrinkage must be positive, got {tau}")));
            }
        }
        Ok(Self {
            history,
            diffs: PairwiseSqDiffs::new(history),
            kind,
            kernel,
            noise_variance: DEFAULT_NOISE_VARIANCE,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn history(&self) -> &EvaluationHistory {
        self.history
    }

    fn offset(&self) -> usize {
        1 + usize::from(self.kind.has_tau_coordinate())
    }

    /// Deterministic starting point: `σ_k² = 1`, `ρ̃_i = 1`, `τ = α` for SAAS.
    pub fn initial_position(&self) -> Vec<f64> {
        let dim = self.history.dim();
        let mut v = vec![0.0; self.offset() + dim + usize::from(self.kind.noisy())];
        if let ModelKind::Saas(c) = self.kind {
            v[1] = c.alpha.ln();
        }
        v
    }

    pub fn hyperparameters(&self, position: &[f64]) -> Result<SaasHyperparameters> {
        let dim = self.history.dim();
        let expected = self.offset() + dim + usize::from(self.kind.noisy());
        if position.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: position.len(),
            });
        }
        let (log_tau, tau_for_rho) = match self.kind {
            ModelKind::Saas(_) => (position[1], position[1]),
            ModelKind::FixedShrinkage { tau, .. } => (tau.ln(), tau.ln()),
            _ => (0.0, 0.0),
        };
        let off = self.offset();
        let psi = SaasHyperparameters {
            kernel_variance: position[0].exp(),
            global_shrinkage: log_tau.exp(),
            inv_sq_lengthscales: position[off..off + dim].iter().map(|u| (u + tau_for_rho).exp()).collect(),
            noise_variance: if self.kind.noisy() {
                position[off + dim].exp()
            } else {
                self.noise_variance
            },
        };
        if !(psi.kernel_variance.is_finite()
            && psi.kernel_variance > 0.0
            && psi.global_shrinkage > 0.0
            && psi.noise_variance > 0.0
            && psi.inv_sq_lengthscales.iter().all(|r| r.is_finite() && *r > 0.0))
        {
            return Err(Error::NonFiniteModel(format!("hyperparameters out of range at {position:?}")));
        }
        Ok(psi)
    }

    /// Log density and its gradient with respect to `position`.
    pub fn evaluate(&self, position: &[f64], grad: &mut [f64]) -> Result<f64> {
        let psi = self.hyperparameters(position)?;
        let (mll, g, _) = mll_and_gradient(self.history, &self.diffs, &psi, self.kernel)?;
        let dim = self.history.dim();
        let off = self.offset();
        let s = LOG_NORMAL_SCALE * LOG_NORMAL_SCALE;

        // d MLL / d log ρ_i
        for (i, (dr, rho)) in g.inv_sq_lengthscales.iter().zip(&psi.inv_sq_lengthscales).enumerate() {
            grad[off + i] = dr * rho;
        }
        grad[0] = g.log_kernel_variance;
        if self.kind.noisy() {
            grad[off + dim] = g.log_noise_variance;
        }

        let mut value = mll;
        match self.kind {
            ModelKind::Saas(c) => {
                let u_k = position[0];
                value += normal_log_density(u_k, 0.0, LOG_NORMAL_SCALE);
                grad[0] -= u_k / s;

                let tau = psi.global_shrinkage;
                value += half_cauchy_log_density(tau, c.alpha) + position[1];
                let mut g_tau = grad[off..off + dim].iter().sum::<f64>();
                g_tau += 1.0 - 2.0 * tau * tau / (c.alpha * c.alpha + tau * tau);
                grad[1] = g_tau;

                for i in 0..dim {
                    let u = position[off + i];
                    let rt = u.exp();
                    value += half_cauchy_log_density(rt, 1.0) + u;
                    grad[off + i] += 1.0 - 2.0 * rt * rt / (1.0 + rt * rt);
                }
                if c.noisy {
                    let u_n = position[off + dim];
                    value += normal_log_density(u_n, 0.0, LOG_NORMAL_SCALE);
                    grad[off + dim] -= u_n / s;
                }
            }
            ModelKind::FixedShrinkage { tau, noisy } => {
                let sk = psi.kernel_variance;
                value += log_normal_log_density(sk, 0.0, LOG_NORMAL_SCALE);
                grad[0] += -position[0] / s - 1.0;
                for i in 0..dim {
                    let rho = psi.inv_sq_lengthscales[i];
                    value += half_cauchy_log_density(rho, tau);
                    grad[off + i] -= 2.0 * rho * rho / (tau * tau + rho * rho);
                }
                if noisy {
                    let u_n = position[off + dim];
                    value += log_normal_log_density(psi.noise_variance, 0.0, LOG_NORMAL_SCALE);
                    grad[off + dim] += -u_n / s - 1.0;
                }
            }
            ModelKind::WeakLogNormal => {
                for i in std::iter::once(0).chain(off..off + dim) {
                    let u = position[i];
                    value += normal_log_density(u, 0.0, LOG_NORMAL_SCALE);
                    grad[i] -= u / s;
                }
            }
            ModelKind::MaximumLikelihood => {}
        }
        if !value.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteModel(format!("log density is not finite at {position:?}")));
        }
        Ok(value)
    }
}

impl LogDensity for ModelTarget<'_> {
    fn dim(&self) -> usize {
        self.offset() + self.history.dim() + usize::from(self.kind.noisy())
    }

    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.evaluate(position, grad)
    }
}

/// SAAS log joint density in unconstrained coordinates.
pub fn log_joint(
    state: &UnconstrainedState,
    history: &EvaluationHistory,
    config: &SaasPriorConfig,
    kernel: Kernel,
) -> Result<f64> {
    if state.log_noise_variance.is_some() != config.noisy {
        return Err(Error::InvalidInput("noise coordinate does not match the prior configuration".into()));
    }
    let target = ModelTarget::new(history, ModelKind::Saas(*config), kernel)?;
    let position = state.to_vec();
    let mut grad = vec![0.0; position.len()];
    target.evaluate(&position, &mut grad)
}

/// Gradient companion of [`log_joint`], in the layout of [`UnconstrainedState::to_vec`].
pub fn log_joint_gradient(
    state: &UnconstrainedState,
    history: &EvaluationHistory,
    config: &SaasPriorConfig,
    kernel: Kernel,
) -> Result<(f64, Vec<f64>)> {
    let target = ModelTarget::new(history, ModelKind::Saas(*config), kernel)?;
    let position = state.to_vec();
    let mut grad = vec![0.0; position.len()];
    let v = target.evaluate(&position, &mut grad)?;
    Ok((v, grad))
}

/// Coordinate-wise lower median of `ρ` across the draws.
pub fn posterior_median_lengthscales(samples: &PosteriorSampleSet) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let dim = samples.dim();
    let mut column = Vec::with_capacity(samples.len());
    Ok((0..dim)
        .map(|i| {
            column.clear();
            column.extend(samples.hyperparameters().map(|h| h.inv_sq_lengthscales[i]));
            column.sort_by(f64::total_cmp);
            column[(column.len() - 1) / 2]
        })
        .collect())
}

/// Number of coordinates whose posterior-median `ρ` exceeds `cutoff`.
pub fn effective_subspace_dimension(samples: &PosteriorSampleSet, cutoff: f64) -> Result<usize> {
    Ok(count_above(&posterior_median_lengthscales(samples)?, cutoff))
}

pub fn count_above(medians: &[f64], cutoff: f64) -> usize {
    medians.iter().filter(|&&m| m > cutoff).count()
}

/// How many of `relevant` rank among the `top_k` largest posterior medians.
pub fn found_relevant_dimensions(samples: &PosteriorSampleSet, relevant: &[usize], top_k: usize) -> Result<usize> {
    Ok(found_relevant_in_medians(&posterior_median_lengthscales(samples)?, relevant, top_k))
}

/// Ranking by decreasing median; ties go to the lower index.
pub fn found_relevant_in_medians(medians: &[f64], relevant: &[usize], top_k: usize) -> usize {
    let mut order: Vec<usize> = (0..medians.len()).collect();
    order.sort_by(|&a, &b| medians[b].total_cmp(&medians[a]).then(a.cmp(&b)));
    let top = &order[..top_k.min(order.len())];
    relevant.iter().filter(|r| top.contains(r)).count()
}
