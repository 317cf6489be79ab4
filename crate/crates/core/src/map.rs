//! Point-estimate inference: one Adam ascent per fixed global shrinkage on
//! a grid, then selection by leave-one-out predictive log likelihood.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{factorize, EvaluationHistory, Kernel, SaasHyperparameters};
use crate::nuts::LogDensity;
use crate::saas::{ModelKind, ModelTarget, SaasPriorConfig};
use crate::samples::{PosteriorSampleSet, SamplerDiagnostics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub tau_grid: Vec<f64>,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_adam: f64,
    /// Kept for reproducibility bookkeeping; the ascent itself starts from a
    /// fixed point and uses no randomness.
    pub seed: u64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            tau_grid: vec![1.0, 1e-1, 1e-2, 1e-3],
            steps: 1500,
            learning_rate: 0.02,
            beta1: 0.5,
            beta2: 0.999,
            epsilon_adam: 1e-8,
            seed: 0,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_grid.is_empty() || self.tau_grid.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidConfig("tau_grid must be nonempty and positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Outcome of the ascent at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapCandidate {
    pub tau: f64,
    pub hyper: SaasHyperparameters,
    pub start_objective: f64,
    pub final_objective: f64,
    pub loo_log_likelihood: f64,
}

#[derive(Debug, Clone)]
pub struct MapResult {
    pub samples: PosteriorSampleSet,
    /// One entry per grid point, `None` where the fit failed.
    pub candidates: Vec<Option<MapCandidate>>,
    pub selected: usize,
}

impl MapResult {
    pub fn selected_tau(&self) -> f64 {
        self.candidates[self.selected].as_ref().map_or(f64::NAN, |c| c.tau)
    }
}

/// Adam ascent on any [`LogDensity`] from `x0`, with the step settings of
/// `config`. A step that lands on a non-finite value is undone and the
/// ascent stops there. Returns the endpoint and the start/end values.
pub fn adam_ascent<T: LogDensity + ?Sized>(target: &T, x0: &[f64], config: &MapConfig) -> Result<(Vec<f64>, f64, f64)> {
    let dim = target.dim();
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; dim];
    let start = target.log_density_and_grad(&x, &mut grad)?;
    let mut value = start;
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let (b1, b2) = (config.beta1, config.beta2);
    let mut next = vec![0.0; dim];
    let mut next_grad = vec![0.0; dim];

    for t in 1..=config.steps {
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        for i in 0..dim {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            let step = config.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + config.epsilon_adam);
            next[i] = x[i] + step;
        }
        match target.log_density_and_grad(&next, &mut next_grad) {
            Ok(val) => {
                std::mem::swap(&mut x, &mut next);
                std::mem::swap(&mut grad, &mut next_grad);
                value = val;
            }
            Err(_) => break,
        }
    }
    Ok((x, start, value))
}

/// Ascent on `MLL + log p(ψ | τ)` at a fixed `τ`, from `σ_k² = 1`, `ρ̃ = 1`.
pub fn map_ascent(
    history: &EvaluationHistory,
    tau: f64,
    config: &MapConfig,
    prior: &SaasPriorConfig,
    kernel: Kernel,
) -> Result<(Vec<f64>, f64, f64)> {
    let target = ModelTarget::new(
        history,
        ModelKind::FixedShrinkage {
            tau,
            noisy: prior.noisy,
        },
        kernel,
    )?;
    adam_ascent(&target, &target.initial_position(), config)
}

/// Runs the whole grid and keeps the candidate with the best LOO score.
pub fn map_fit_detailed(
    history: &EvaluationHistory,
    config: &MapConfig,
    prior: &SaasPriorConfig,
    kernel: Kernel,
) -> Result<MapResult> {
    config.validate()?;
    prior.validate()?;
    if history.len() < 2 {
        return Err(Error::InvalidInput("MAP selection needs at least two observations".into()));
    }
    let candidates: Vec<Option<MapCandidate>> = config
        .tau_grid
        .par_iter()
        .map(|&tau| {
            let fit = || -> Result<MapCandidate> {
                let (x, start_objective, final_objective) = map_ascent(history, tau, config, prior, kernel)?;
                let target = ModelTarget::new(
                    history,
                    ModelKind::FixedShrinkage {
                        tau,
                        noisy: prior.noisy,
                    },
                    kernel,
                )?;
                let hyper = target.hyperparameters(&x)?;
                let loo_log_likelihood = loo_log_likelihood(history, &hyper, kernel)?;
                if !loo_log_likelihood.is_finite() {
                    return Err(Error::NonFiniteModel("LOO likelihood is not finite".into()));
                }
                Ok(MapCandidate {
                    tau,
                    hyper,
                    start_objective,
                    final_objective,
                    loo_log_likelihood,
                })
            };
            fit().ok()
        })
        .collect();

    let selected = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.as_ref().map(|c| (i, c.loo_log_likelihood)))
        .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
            Some((_, b)) if b >= s => best,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::NonFiniteModel("every MAP grid fit failed".into()))?;

    let hyper = candidates[selected].as_ref().map(|c| c.hyper.clone()).expect("selected candidate exists");
    let diagnostics = SamplerDiagnostics {
        step_size: config.learning_rate,
        inv_mass: Vec::new(),
        ..SamplerDiagnostics::default()
    };
    let samples = PosteriorSampleSet::from_hyperparameters(history, vec![hyper], kernel, diagnostics)?;
    Ok(MapResult {
        samples,
        candidates,
        selected,
    })
}

/// MAP point estimate wrapped as a one-draw sample set.
pub fn map_fit(
    history: &EvaluationHistory,
    config: &MapConfig,
    prior: &SaasPriorConfig,
    kernel: Kernel,
) -> Result<PosteriorSampleSet> {
    map_fit_detailed(history, config, prior, kernel).map(|r| r.samples)
}

/// Closed-form leave-one-out predictive log likelihood of `y_std`.
///
/// With `C = (K + σ²I)⁻¹` and `α = C y`, the held-out predictive for `y_n`
/// has mean `y_n − α_n / C_nn` and variance `1 / C_nn` (noise included).
pub fn loo_log_likelihood(history: &EvaluationHistory, psi: &SaasHyperparameters, kernel: Kernel) -> Result<f64> {
    if history.len() < 2 {
        return Err(Error::InvalidInput("LOO needs at least two observations".into()));
    }
    let fact = factorize(history, psi, kernel)?;
    let inv = fact.inverse();
    let alpha = fact.alpha();
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    for n in 0..history.len() {
        let c = inv[(n, n)];
        if !(c > 0.0) {
            return Err(Error::NonFiniteModel(format!("non-positive LOO precision at row {n}")));
        }
        total += -0.5 * ln_2pi + 0.5 * c.ln() - alpha[n] * alpha[n] / (2.0 * c);
    }
    Ok(total)
}
