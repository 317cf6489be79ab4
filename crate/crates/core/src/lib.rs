//! Bayesian optimization with sparse axis-aligned subspace (SAAS) Gaussian
//! processes.
//!
//! The GP surrogate places a hierarchical half-Cauchy prior on its inverse
//! squared length scales so that only a few input dimensions escape zero.
//! Hyperparameters are inferred with NUTS ([`nuts`]) or with a grid of MAP
//! fits ([`map`]), and queries maximize expected improvement averaged over
//! the posterior draws ([`acquisition`]).

pub mod acquisition;
pub mod benchmarks;
pub mod driver;
pub mod error;
pub mod gp;
pub mod map;
pub mod nuts;
pub mod persist;
pub mod saas;
pub mod samples;
pub mod sobol;

pub use acquisition::{ei_averaged, ei_gradient, ei_single, propose_next, AcquisitionConfig, Proposal};
pub use benchmarks::{BaseFunction, BenchmarkProblem, RotationSpec};
pub use driver::{run, BoConfig, Inference, IterationEntry, RunRecord, SummaryRow};
pub use error::{Error, Result};
pub use gp::{EvaluationHistory, GpFactorization, GpPrediction, Kernel, SaasHyperparameters};
pub use map::{map_fit, MapConfig};
pub use nuts::{fit_saas_nuts, nuts_sample, LogDensity, NutsConfig};
pub use saas::{ModelKind, SaasPriorConfig, UnconstrainedState};
pub use samples::{PosteriorSampleSet, SamplerDiagnostics};
pub use sobol::{sobol_points, SobolStream};
