//! The optimization loop, replication, the Sobol baseline, cross-replication
//! summaries and the model-fit comparison.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{ei_values_single, propose_next, top_k_indices, AcquisitionConfig};
use crate::benchmarks::BenchmarkProblem;
use crate::error::{Error, Result};
use crate::gp::{factorize, predict, EvaluationHistory, Kernel, DEFAULT_NOISE_VARIANCE};
use crate::map::{adam_ascent, map_fit_detailed, MapConfig};
use crate::nuts::{fit_model_nuts, fit_saas_nuts, NutsConfig};
use crate::saas::{count_above, posterior_median_lengthscales, ModelKind, ModelTarget, SaasPriorConfig, UnconstrainedState};
use crate::samples::{PosteriorSampleSet, SamplerDiagnostics};
use crate::sobol::{sobol_points, SobolStream};

/// Hyperparameter inference used inside the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Inference {
    Nuts(NutsConfig),
    Map(MapConfig),
}

impl Inference {
    pub fn name(&self) -> &'static str {
        match self {
            Inference::Nuts(_) => "nuts",
            Inference::Map(_) => "map",
        }
    }
}

/// Evaluations supplied instead of the Sobol initial design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialDesign {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub initial_budget: usize,
    pub total_budget: usize,
    pub prior: SaasPriorConfig,
    pub inference: Inference,
    pub kernel: Kernel,
    pub acquisition: AcquisitionConfig,
    pub seed: u64,
    #[serde(default)]
    pub initial_design: Option<InitialDesign>,
    /// Start each chain from the previous iteration's adapted mass.
    #[serde(default)]
    pub warm_start: bool,
    /// Refit hyperparameters only every `refit_every` iterations; in between
    /// the previous draws are re-conditioned on the new data.
    #[serde(default = "one")]
    pub refit_every: usize,
}

fn one() -> usize {
    1
}

impl BoConfig {
    pub fn new(initial_budget: usize, total_budget: usize) -> Self {
        Self {
            initial_budget,
            total_budget,
            prior: SaasPriorConfig::default(),
            inference: Inference::Nuts(NutsConfig::default()),
            kernel: Kernel::Rbf,
            acquisition: AcquisitionConfig::default(),
            seed: 0,
            initial_design: None,
            warm_start: false,
            refit_every: 1,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.initial_budget < 2 || self.initial_budget > self.total_budget {
            return Err(Error::InvalidConfig(format!(
                "need 2 <= initial budget ({}) <= total budget ({})",
                self.initial_budget, self.total_budget
            )));
        }
        self.prior.validate()?;
        self.acquisition.validate()?;
        match &self.inference {
            Inference::Nuts(c) => c.validate()?,
            Inference::Map(c) => c.validate()?,
        }
        if self.refit_every == 0 {
            return Err(Error::InvalidConfig("refit_every must be at least 1".into()));
        }
        if let Some(d) = &self.initial_design {
            if d.x.len() != self.initial_budget || d.y.len() != self.initial_budget {
                return Err(Error::InvalidConfig(format!(
                    "initial design holds {} points and {} values, expected {}",
                    d.x.len(),
                    d.y.len(),
                    self.initial_budget
                )));
            }
            if d.x.iter().any(|r| r.len() != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: d.x.iter().map(Vec::len).find(|&l| l != dim).unwrap_or(0),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Initial,
    Model,
    Fallback,
}

/// One objective evaluation and the model state that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationEntry {
    /// 1-based evaluation index.
    pub t: usize,
    pub phase: Phase,
    pub x: Vec<f64>,
    pub y: f64,
    /// Best value among evaluations `1..=t`.
    pub best: f64,
    /// Posterior-median `ρ` of the fit on the first `t - 1` evaluations.
    #[serde(default)]
    pub median_lengthscales: Option<Vec<f64>>,
    #[serde(default)]
    pub effective_dim_01: Option<usize>,
    #[serde(default)]
    pub effective_dim_05: Option<usize>,
    #[serde(default)]
    pub jitter: Option<f64>,
    #[serde(default)]
    pub diagnostics: Option<SamplerDiagnostics>,
    /// Global shrinkage picked by the MAP grid.
    #[serde(default)]
    pub map_tau: Option<f64>,
    #[serde(default)]
    pub ei: Option<f64>,
    /// Failures, fallbacks and duplicate queries.
    #[serde(default)]
    pub note: Option<String>,
    /// Seconds spent on this iteration. Not serialized with the record so
    /// that records stay byte-identical across runs.
    #[serde(skip)]
    pub wall_clock: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub problem: String,
    pub seed: u64,
    pub entries: Vec<IterationEntry>,
    pub x_min: Vec<f64>,
    pub y_min: f64,
    pub fallbacks: usize,
}

impl RunRecord {
    pub fn from_entries(problem: &str, seed: u64, entries: Vec<IterationEntry>) -> Self {
        let (x_min, y_min) = entries
            .iter()
            .fold(None, |best: Option<&IterationEntry>, e| match best {
                Some(b) if b.y <= e.y => Some(b),
                _ => Some(e),
            })
            .map_or((Vec::new(), f64::INFINITY), |e| (e.x.clone(), e.y));
        let fallbacks = entries.iter().filter(|e| e.phase == Phase::Fallback).count();
        Self {
            problem: problem.to_string(),
            seed,
            entries,
            x_min,
            y_min,
            fallbacks,
        }
    }

    pub fn best_trace(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.best).collect()
    }

    /// The entry whose model was fit on the first `n` evaluations.
    pub fn fit_after(&self, n: usize) -> Option<&IterationEntry> {
        self.entries.get(n)
    }
}

/// Independent sub-seed for stream `stream` at step `index`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 0;
const STREAM_SAMPLER: u64 = 1;
const STREAM_ACQUISITION: u64 = 2;
const STREAM_BASELINE: u64 = 3;

/// Picks the best not-yet-evaluated Sobol candidate under EI with the
/// hyperparameters fixed at their prior medians.
pub fn fallback_query(history: &EvaluationHistory, config: &BoConfig, seed: u64) -> Result<(Vec<f64>, Option<f64>)> {
    let dim = history.dim();
    let stream = SobolStream::new(dim, Some(seed))?;
    let candidates: Vec<Vec<f64>> = (1..=config.acquisition.candidate_count as u64).map(|i| stream.point_at(i)).collect();
    let psi = UnconstrainedState::prior_median(dim, &config.prior).to_hyperparameters(DEFAULT_NOISE_VARIANCE);
    let values = match factorize(history, &psi, config.kernel) {
        Ok(fact) => ei_values_single(&candidates, history, &psi, &fact, config.acquisition.sigma_floor),
        Err(_) => vec![0.0; candidates.len()],
    };
    let order = top_k_indices(&values, values.len());
    let pick = order
        .into_iter()
        .find(|&i| !history.rows().any(|r| r == candidates[i].as_slice()))
        .unwrap_or(0);
    Ok((candidates[pick].clone(), Some(values[pick])))
}

struct Fit {
    samples: PosteriorSampleSet,
    map_tau: Option<f64>,
}

fn fit_model(history: &EvaluationHistory, config: &BoConfig, t: usize, warm_mass: Option<&Vec<f64>>) -> Result<Fit> {
    match &config.inference {
        Inference::Nuts(nc) => {
            let mut nc = nc.clone();
            nc.seed = derive_seed(config.seed, STREAM_SAMPLER, t as u64);
            if config.warm_start {
                if let Some(m) = warm_mass.filter(|m| m.len() == nc_dim(history, &config.prior)) {
                    nc.initial_inv_mass = Some(m.clone());
                }
            }
            Ok(Fit {
                samples: fit_saas_nuts(history, &config.prior, config.kernel, &nc)?,
                map_tau: None,
            })
        }
        Inference::Map(mc) => {
            let r = map_fit_detailed(history, mc, &config.prior, config.kernel)?;
            Ok(Fit {
                map_tau: Some(r.selected_tau()),
                samples: r.samples,
            })
        }
    }
}

fn nc_dim(history: &EvaluationHistory, prior: &SaasPriorConfig) -> usize {
    history.dim() + 2 + usize::from(prior.noisy)
}

/// Runs the loop against an arbitrary objective on `[0, 1]^dim`.
pub fn run_objective<F>(name: &str, dim: usize, objective: F, config: &BoConfig) -> Result<RunRecord>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    run_observed(name, dim, objective, config, |_| Ok(()))
}

/// As [`run_objective`], handing each entry to `observe` as soon as it is
/// complete (used to stream records to disk).
pub fn run_observed<F, O>(name: &str, dim: usize, mut objective: F, config: &BoConfig, mut observe: O) -> Result<RunRecord>
where
    F: FnMut(&[f64]) -> Result<f64>,
    O: FnMut(&IterationEntry) -> Result<()>,
{
    config.validate(dim)?;
    let m = config.initial_budget;
    let mut history = EvaluationHistory::new(dim);
    let mut entries: Vec<IterationEntry> = Vec::with_capacity(config.total_budget);
    let mut best = f64::INFINITY;
    let mut record = |entries: &mut Vec<IterationEntry>, mut e: IterationEntry, best: &mut f64| -> Result<()> {
        *best = best.min(e.y);
        e.best = *best;
        observe(&e)?;
        entries.push(e);
        Ok(())
    };

    let initial: Vec<(Vec<f64>, Option<f64>)> = match &config.initial_design {
        Some(d) => d.x.iter().cloned().zip(d.y.iter().map(|&v| Some(v))).collect(),
        None => sobol_points(m, dim, Some(derive_seed(config.seed, STREAM_INIT, 0)))?
            .into_iter()
            .map(|x| (x, None))
            .collect(),
    };
    for (i, (x, given)) in initial.into_iter().enumerate() {
        let clock = Instant::now();
        let y = match given {
            Some(v) => v,
            None => objective(&x)?,
        };
        history.push(&x, y)?;
        let entry = IterationEntry {
            t: i + 1,
            phase: Phase::Initial,
            x,
            y,
            best: y,
            median_lengthscales: None,
            effective_dim_01: None,
            effective_dim_05: None,
            jitter: None,
            diagnostics: None,
            map_tau: None,
            ei: None,
            note: None,
            wall_clock: clock.elapsed().as_secs_f64(),
        };
        record(&mut entries, entry, &mut best)?;
    }

    let mut previous: Option<PosteriorSampleSet> = None;
    for t in (m + 1)..=config.total_budget {
        let clock = Instant::now();
        let reuse = config.refit_every > 1 && (t - m - 1) % config.refit_every != 0;
        let fit = match (&previous, reuse) {
            (Some(prev), true) => prev.refit(&history).map(|samples| Fit { samples, map_tau: None }),
            _ => fit_model(
                &history,
                config,
                t,
                previous.as_ref().map(|p| &p.diagnostics.inv_mass),
            ),
        };
        let acq_seed = derive_seed(config.seed, STREAM_ACQUISITION, t as u64);
        let proposal = fit.and_then(|f| {
            let p = propose_next(&history, &f.samples, &config.acquisition, acq_seed)?;
            Ok((f, p))
        });
        let mut entry = IterationEntry {
            t,
            phase: Phase::Model,
            x: Vec::new(),
            y: f64::NAN,
            best: f64::NAN,
            median_lengthscales: None,
            effective_dim_01: None,
            effective_dim_05: None,
            jitter: None,
            diagnostics: None,
            map_tau: None,
            ei: None,
            note: None,
            wall_clock: 0.0,
        };
        match proposal {
            Ok((fit, p)) => {
                let medians = posterior_median_lengthscales(&fit.samples)?;
                entry.effective_dim_01 = Some(count_above(&medians, 0.1));
                entry.effective_dim_05 = Some(count_above(&medians, 0.5));
                entry.median_lengthscales = Some(medians);
                entry.jitter = Some(fit.samples.max_jitter());
                entry.diagnostics = Some(fit.samples.diagnostics.clone());
                entry.map_tau = fit.map_tau;
                entry.ei = Some(p.ei);
                entry.x = p.x;
                previous = Some(fit.samples);
            }
            Err(err) => {
                let (x, ei) = fallback_query(&history, config, acq_seed)?;
                entry.phase = Phase::Fallback;
                entry.note = Some(format!("inference failed: {err}"));
                entry.x = x;
                entry.ei = ei;
            }
        }
        if history.rows().any(|r| r == entry.x.as_slice()) {
            let note = entry.note.take().map_or(String::new(), |n| n + "; ");
            entry.note = Some(note + "duplicate query");
        }
        entry.y = objective(&entry.x)?;
        history.push(&entry.x, entry.y)?;
        entry.wall_clock = clock.elapsed().as_secs_f64();
        record(&mut entries, entry, &mut best)?;
    }
    Ok(RunRecord::from_entries(name, config.seed, entries))
}

pub fn run(problem: &BenchmarkProblem, config: &BoConfig) -> Result<RunRecord> {
    run_objective(&problem.name, problem.dim, |x| problem.evaluate(x), config)
}

/// `reps` runs with seeds `base_seed + r`, in replication order.
pub fn replicate(problem: &BenchmarkProblem, config: &BoConfig, reps: usize, base_seed: u64) -> Vec<Result<RunRecord>> {
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut c = config.clone();
            c.seed = base_seed + r as u64;
            run(problem, &c)
        })
        .collect()
}

/// Evaluates `total` scrambled Sobol points.
pub fn sobol_baseline(problem: &BenchmarkProblem, total: usize, seed: u64) -> Result<RunRecord> {
    let points = sobol_points(total, problem.dim, Some(derive_seed(seed, STREAM_BASELINE, 0)))?;
    let mut best = f64::INFINITY;
    let mut entries = Vec::with_capacity(total);
    for (i, x) in points.into_iter().enumerate() {
        let clock = Instant::now();
        let y = problem.evaluate(&x)?;
        best = best.min(y);
        entries.push(IterationEntry {
            t: i + 1,
            phase: Phase::Initial,
            x,
            y,
            best,
            median_lengthscales: None,
            effective_dim_01: None,
            effective_dim_05: None,
            jitter: None,
            diagnostics: None,
            map_tau: None,
            ei: None,
            note: None,
            wall_clock: clock.elapsed().as_secs_f64(),
        });
    }
    Ok(RunRecord::from_entries(&problem.name, seed, entries))
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman–Fan type 7). `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Per-iteration statistics of the incumbent across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub iteration: usize,
    pub mean: f64,
    pub stderr: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub reps: usize,
}

/// Aggregates best-so-far traces; iteration `t` uses every record that
/// reached `t`.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let len = records.iter().map(|r| r.entries.len()).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let mut vals: Vec<f64> = records.iter().filter_map(|r| r.entries.get(i).map(|e| e.best)).collect();
            vals.sort_by(f64::total_cmp);
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let stderr = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
            } else {
                0.0
            };
            SummaryRow {
                iteration: i + 1,
                mean,
                stderr,
                q05: quantile_sorted(&vals, 0.05),
                q50: quantile_sorted(&vals, 0.5),
                q95: quantile_sorted(&vals, 0.95),
                reps: vals.len(),
            }
        })
        .collect()
}

/// Predictive summary at one test point, in standardized training units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPrediction {
    pub y: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFitReport {
    pub model: String,
    pub predictions: Vec<TestPrediction>,
    /// Sum over test points of the log predictive density of `y`.
    pub test_log_likelihood: Option<f64>,
    pub rmse: Option<f64>,
    pub median_lengthscales: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub models: Vec<ModelFitReport>,
}

impl DiagnoseReport {
    pub fn model(&self, name: &str) -> Option<&ModelFitReport> {
        self.models.iter().find(|m| m.model == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseConfig {
    pub nuts: NutsConfig,
    /// Step settings for the likelihood maximization.
    pub mle: MapConfig,
    pub prior: SaasPriorConfig,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            nuts: NutsConfig::default(),
            mle: MapConfig::default(),
            prior: SaasPriorConfig::default(),
        }
    }
}

fn mle_fit(train: &EvaluationHistory, kernel: Kernel, config: &MapConfig) -> Result<PosteriorSampleSet> {
    let target = ModelTarget::new(train, ModelKind::MaximumLikelihood, kernel)?;
    let (x, _, _) = adam_ascent(&target, &target.initial_position(), config)?;
    let hyper = target.hyperparameters(&x)?;
    PosteriorSampleSet::from_hyperparameters(train, vec![hyper], kernel, SamplerDiagnostics::default())
}

/// Scores a fitted model on held-out data. Each draw contributes a Gaussian
/// with the latent variance plus noise; the mixture is summarized by its
/// first two moments for the intervals and used exactly for the likelihood.
pub fn score_model(
    name: &str,
    train: &EvaluationHistory,
    test: &EvaluationHistory,
    samples: &PosteriorSampleSet,
) -> Result<ModelFitReport> {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let l = samples.len() as f64;
    let mut predictions = Vec::with_capacity(test.len());
    let mut log_lik = 0.0;
    let mut sq_err = 0.0;
    for (row, &y_raw) in test.rows().zip(test.y_raw()) {
        let y = train.to_std(y_raw);
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        let mut terms = Vec::with_capacity(samples.len());
        for d in samples.draws() {
            let p = predict(row, train, &d.hyper, &d.factorization)?;
            let var = p.variance_std + d.hyper.noise_variance;
            m1 += p.mean_std;
            m2 += var + p.mean_std * p.mean_std;
            terms.push(-0.5 * ln_2pi - 0.5 * var.ln() - (y - p.mean_std).powi(2) / (2.0 * var));
        }
        let mean = m1 / l;
        let sd = (m2 / l - mean * mean).max(0.0).sqrt();
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        log_lik += top + (terms.iter().map(|t| (t - top).exp()).sum::<f64>() / l).ln();
        sq_err += (y - mean).powi(2);
        predictions.push(TestPrediction {
            y,
            mean,
            lower: mean - 1.96 * sd,
            upper: mean + 1.96 * sd,
        });
    }
    Ok(ModelFitReport {
        model: name.to_string(),
        predictions,
        test_log_likelihood: Some(log_lik),
        rmse: Some((sq_err / test.len() as f64).sqrt()),
        median_lengthscales: Some(posterior_median_lengthscales(samples)?),
        error: None,
    })
}

/// Fits maximum likelihood, weak-prior NUTS and SAAS NUTS on `train` and
/// scores each on `test`. Per-model failures are reported, not raised.
pub fn fit_diagnose(
    train: &EvaluationHistory,
    test: &EvaluationHistory,
    kernel: Kernel,
    config: &DiagnoseConfig,
) -> Result<DiagnoseReport> {
    if train.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            found: test.dim(),
        });
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidInput("train and test sets must be nonempty".into()));
    }
    let fits: [(&str, Box<dyn Fn() -> Result<PosteriorSampleSet> + Sync>); 3] = [
        ("mle", Box::new(|| mle_fit(train, kernel, &config.mle))),
        (
            "weak-prior",
            Box::new(|| fit_model_nuts(train, ModelKind::WeakLogNormal, kernel, &config.nuts)),
        ),
        ("saas", Box::new(|| fit_saas_nuts(train, &config.prior, kernel, &config.nuts))),
    ];
    let models = fits
        .par_iter()
        .map(|(name, fit)| match fit().and_then(|s| score_model(name, train, test, &s)) {
            Ok(r) => r,
            Err(e) => ModelFitReport {
                model: name.to_string(),
                predictions: Vec::new(),
                test_log_likelihood: None,
                rmse: None,
                median_lengthscales: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(DiagnoseReport { models })
}

/// One-dimensional test function `(6t - 2)² sin(12t - 4)` on `[0, 1]`.
pub fn forrester(t: f64) -> f64 {
    (6.0 * t - 2.0).powi(2) * (12.0 * t - 4.0).sin()
}

/// Uniform inputs in `[0, 1]^dim`; the target depends on coordinate
/// `active` only.
pub fn sparse_synthetic(dim: usize, active: usize, n: usize, seed: u64) -> Result<EvaluationHistory> {
    if active >= dim {
        return Err(Error::InvalidConfig(format!("active coordinate {active} outside D={dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0, 1.0);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| unit.sample(&mut rng)).collect()).collect();
    let y: Vec<f64> = rows.iter().map(|r| forrester(r[active])).collect();
    EvaluationHistory::from_rows(&rows, &y)
}
