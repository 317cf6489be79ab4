//! Hyperparameter draws with cached factorizations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{factorize, EvaluationHistory, GpFactorization, Kernel, SaasHyperparameters};

#[derive(Debug, Clone)]
pub struct PosteriorDraw {
    pub hyper: SaasHyperparameters,
    pub factorization: GpFactorization,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerDiagnostics {
    pub divergences: usize,
    pub mean_accept_prob: f64,
    pub step_size: f64,
    /// Adapted inverse mass diagonal (unconstrained coordinates).
    pub inv_mass: Vec<f64>,
    pub max_leapfrog_steps: usize,
    /// Set when more than half of the post-warmup transitions diverged.
    pub warning: Option<String>,
}

/// `L` hyperparameter draws, each with the factorization of its kernel
/// matrix on the history it was fitted to.
#[derive(Debug, Clone)]
pub struct PosteriorSampleSet {
    kernel: Kernel,
    draws: Vec<PosteriorDraw>,
    pub diagnostics: SamplerDiagnostics,
}

impl PosteriorSampleSet {
    /// Factorizes every draw on `history`.
    pub fn from_hyperparameters(
        history: &EvaluationHistory,
        hypers: Vec<SaasHyperparameters>,
        kernel: Kernel,
        diagnostics: SamplerDiagnostics,
    ) -> Result<Self> {
        if hypers.is_empty() {
            return Err(Error::EmptySamples);
        }
        let draws = hypers
            .into_iter()
            .map(|hyper| {
                hyper.validate()?;
                let factorization = factorize(history, &hyper, kernel)?;
                Ok(PosteriorDraw { hyper, factorization })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kernel,
            draws,
            diagnostics,
        })
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn draws(&self) -> &[PosteriorDraw] {
        &self.draws
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.draws.first().map_or(0, |d| d.hyper.dim())
    }

    pub fn hyperparameters(&self) -> impl Iterator<Item = &SaasHyperparameters> {
        self.draws.iter().map(|d| &d.hyper)
    }

    /// Largest jitter applied across the draws.
    pub fn max_jitter(&self) -> f64 {
        self.draws
            .iter()
            .map(|d| d.factorization.jitter())
            .fold(0.0, f64::max)
    }

    /// Re-factorizes the same hyperparameters on a new history.
    pub fn refit(&self, history: &EvaluationHistory) -> Result<Self> {
        Self::from_hyperparameters(
            history,
            self.hyperparameters().cloned().collect(),
            self.kernel,
            self.diagnostics.clone(),
        )
    }
}
