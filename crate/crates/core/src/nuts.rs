//! No-U-Turn sampler with dual-averaging step size and windowed diagonal
//! mass-matrix adaptation.
//!
//! The transition is the slice-sampling variant of NUTS: a slice level is
//! drawn below the initial joint density, the trajectory doubles in a random
//! direction until either end starts to turn back or the depth limit is hit,
//! and the next state is chosen among in-slice leaves with the progressive
//! (biased) subtree selection rule.
//!
//! Warmup layout for `W` warmup iterations: step-size adaptation runs
//! throughout; inverse-mass estimates are collected over
//! `[0.15 W, W/2)` and `[W/2, 0.9 W)`, and the metric is replaced at the
//! end of each window, after which dual averaging restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{EvaluationHistory, Kernel};
use crate::saas::{ModelKind, ModelTarget, SaasPriorConfig};
use crate::samples::{PosteriorSampleSet, SamplerDiagnostics};

/// A differentiable log density over `R^dim`.
pub trait LogDensity {
    fn dim(&self) -> usize;

    /// Returns `log p(position)` and writes its gradient into `grad`.
    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NutsConfig {
    pub warmup_steps: usize,
    pub post_warmup_steps: usize,
    pub thinning: usize,
    pub max_tree_depth: usize,
    pub target_accept_prob: f64,
    pub divergence_energy_threshold: f64,
    pub seed: u64,
    /// Starting inverse mass diagonal; identity when absent.
    #[serde(default)]
    pub initial_inv_mass: Option<Vec<f64>>,
}

impl Default for NutsConfig {
    fn default() -> Self {
        Self {
            warmup_steps: 512,
            post_warmup_steps: 256,
            thinning: 16,
            max_tree_depth: 6,
            target_accept_prob: 0.8,
            divergence_energy_threshold: 1000.0,
            seed: 0,
            initial_inv_mass: None,
        }
    }
}

impl NutsConfig {
    /// The cheaper `(128, 128, 8)` budget.
    pub fn reduced() -> Self {
        Self {
            warmup_steps: 128,
            post_warmup_steps: 128,
            thinning: 8,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn retained(&self) -> usize {
        self.post_warmup_steps / self.thinning.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thinning == 0 || self.post_warmup_steps == 0 || self.post_warmup_steps % self.thinning != 0 {
            return Err(Error::InvalidConfig(format!(
                "post_warmup_steps ({}) must be a positive multiple of thinning ({})",
                self.post_warmup_steps, self.thinning
            )));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::InvalidConfig("max_tree_depth must be at least 1".into()));
        }
        if !(self.target_accept_prob > 0.0 && self.target_accept_prob < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "target_accept_prob must lie in (0, 1), got {}",
                self.target_accept_prob
            )));
        }
        if !(self.divergence_energy_threshold > 0.0) {
            return Err(Error::InvalidConfig("divergence threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Position, momentum and the density/gradient at the position.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub grad: Vec<f64>,
    pub log_density: f64,
}

impl PhasePoint {
    pub fn new<T: LogDensity + ?Sized>(target: &T, position: Vec<f64>, momentum: Vec<f64>) -> Result<Self> {
        let mut grad = vec![0.0; position.len()];
        let log_density = target.log_density_and_grad(&position, &mut grad)?;
        if !log_density.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteModel("log density or gradient is not finite".into()));
        }
        Ok(Self {
            position,
            momentum,
            grad,
            log_density,
        })
    }

    pub fn kinetic_energy(&self, inv_mass: &[f64]) -> f64 {
        0.5 * self
            .momentum
            .iter()
            .zip(inv_mass)
            .map(|(p, m)| p * p * m)
            .sum::<f64>()
    }

    /// Negative Hamiltonian.
    pub fn joint(&self, inv_mass: &[f64]) -> f64 {
        self.log_density - self.kinetic_energy(inv_mass)
    }
}

/// One velocity-Verlet step. Returns `None` when the density or gradient at
/// the new position is not finite (a divergence).
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    point: &PhasePoint,
    step_size: f64,
    inv_mass: &[f64],
) -> Option<PhasePoint> {
    let half = 0.5 * step_size;
    let momentum: Vec<f64> = point.momentum.iter().zip(&point.grad).map(|(p, g)| p + half * g).collect();
    let position: Vec<f64> = point
        .position
        .iter()
        .zip(&momentum)
        .zip(inv_mass)
        .map(|((q, p), m)| q + step_size * m * p)
        .collect();
    let mut next = PhasePoint::new(target, position, momentum).ok()?;
    for (p, g) in next.momentum.iter_mut().zip(&next.grad) {
        *p += half * g;
    }
    next.momentum.iter().all(|p| p.is_finite()).then_some(next)
}

/// Draws in unconstrained coordinates plus run statistics.
#[derive(Debug, Clone)]
pub struct NutsOutput {
    pub draws: Vec<Vec<f64>>,
    pub diagnostics: SamplerDiagnostics,
    /// Leapfrog steps used by every transition, warmup included.
    pub leapfrog_counts: Vec<usize>,
}

struct Subtree {
    minus: PhasePoint,
    plus: PhasePoint,
    proposal: PhasePoint,
    n_valid: u64,
    keep_going: bool,
    accept_sum: f64,
    n_accept: u64,
    n_leapfrog: usize,
    divergent: bool,
}

struct Transition<'a, T: LogDensity + ?Sized> {
    target: &'a T,
    inv_mass: &'a [f64],
    step_size: f64,
    log_slice: f64,
    initial_joint: f64,
    max_energy_error: f64,
}

impl<T: LogDensity + ?Sized> Transition<'_, T> {
    fn leaf(&self, from: &PhasePoint, direction: f64) -> Subtree {
        match leapfrog(self.target, from, direction * self.step_size, self.inv_mass) {
            Some(next) => {
                let joint = next.joint(self.inv_mass);
                let in_slice = self.log_slice <= joint;
                let divergent = self.log_slice >= self.max_energy_error + joint;
                let accept = (joint - self.initial_joint).exp().min(1.0);
                Subtree {
                    minus: next.clone(),
                    plus: next.clone(),
                    proposal: next,
                    n_valid: u64::from(in_slice),
                    keep_going: !divergent,
                    accept_sum: if accept.is_finite() { accept } else { 0.0 },
                    n_accept: 1,
                    n_leapfrog: 1,
                    divergent,
                }
            }
            None => Subtree {
                minus: from.clone(),
                plus: from.clone(),
                proposal: from.clone(),
                n_valid: 0,
                keep_going: false,
                accept_sum: 0.0,
                n_accept: 1,
                n_leapfrog: 1,
                divergent: true,
            },
        }
    }

    fn build(&self, from: &PhasePoint, direction: f64, depth: usize, rng: &mut ChaCha8Rng) -> Subtree {
        if depth == 0 {
            return self.leaf(from, direction);
        }
        let mut tree = self.build(from, direction, depth - 1, rng);
        if !tree.keep_going {
            return tree;
        }
        let edge = if direction < 0.0 { &tree.minus } else { &tree.plus };
        let other = self.build(&edge.clone(), direction, depth - 1, rng);
        let total = tree.n_valid + other.n_valid;
        if total > 0 && rng.gen::<f64>() < other.n_valid as f64 / total as f64 {
            tree.proposal = other.proposal;
        }
        if direction < 0.0 {
            tree.minus = other.minus;
        } else {
            tree.plus = other.plus;
        }
        tree.n_valid = total;
        tree.accept_sum += other.accept_sum;
        tree.n_accept += other.n_accept;
        tree.n_leapfrog += other.n_leapfrog;
        tree.divergent |= other.divergent;
        tree.keep_going = other.keep_going && !is_turning(&tree.minus, &tree.plus, self.inv_mass);
        tree
    }
}

fn is_turning(minus: &PhasePoint, plus: &PhasePoint, inv_mass: &[f64]) -> bool {
    let mut dot_minus = 0.0;
    let mut dot_plus = 0.0;
    for i in 0..minus.position.len() {
        let span = plus.position[i] - minus.position[i];
        dot_minus += span * inv_mass[i] * minus.momentum[i];
        dot_plus += span * inv_mass[i] * plus.momentum[i];
    }
    !(dot_minus >= 0.0 && dot_plus >= 0.0)
}

struct TransitionStats {
    accept_prob: f64,
    n_leapfrog: usize,
    divergent: bool,
}

fn transition<T: LogDensity + ?Sized>(
    target: &T,
    current: &PhasePoint,
    step_size: f64,
    inv_mass: &[f64],
    config: &NutsConfig,
    rng: &mut ChaCha8Rng,
) -> (PhasePoint, TransitionStats) {
    let mut start = current.clone();
    start.momentum = inv_mass
        .iter()
        .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
        .collect();
    let initial_joint = start.joint(inv_mass);
    let log_slice = initial_joint - rng.sample::<f64, _>(Exp1);
    let ctx = Transition {
        target,
        inv_mass,
        step_size,
        log_slice,
        initial_joint,
        max_energy_error: config.divergence_energy_threshold,
    };

    let mut minus = start.clone();
    let mut plus = start.clone();
    let mut sample = start;
    let mut n_valid = 1u64;
    let mut stats = TransitionStats {
        accept_prob: 0.0,
        n_leapfrog: 0,
        divergent: false,
    };
    let mut accept_sum = 0.0;
    let mut n_accept = 0u64;

    for depth in 0..config.max_tree_depth {
        let direction = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let tree = if direction < 0.0 {
            let t = ctx.build(&minus, direction, depth, rng);
            minus = t.minus.clone();
            t
        } else {
            let t = ctx.build(&plus, direction, depth, rng);
            plus = t.plus.clone();
            t
        };
        accept_sum += tree.accept_sum;
        n_accept += tree.n_accept;
        stats.n_leapfrog += tree.n_leapfrog;
        stats.divergent |= tree.divergent;
        if tree.keep_going && tree.n_valid > 0 && rng.gen::<f64>() < tree.n_valid as f64 / n_valid as f64 {
            sample = tree.proposal;
        }
        n_valid += tree.n_valid;
        if !tree.keep_going || is_turning(&minus, &plus, inv_mass) {
            break;
        }
    }
    stats.accept_prob = if n_accept > 0 {
        accept_sum / n_accept as f64
    } else {
        0.0
    };
    (sample, stats)
}

fn find_reasonable_step_size<T: LogDensity + ?Sized>(
    target: &T,
    point: &PhasePoint,
    inv_mass: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut start = point.clone();
    start.momentum = inv_mass
        .iter()
        .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
        .collect();
    let joint0 = start.joint(inv_mass);
    let log_ratio = |eps: f64| match leapfrog(target, &start, eps, inv_mass) {
        Some(next) => next.joint(inv_mass) - joint0,
        None => f64::NEG_INFINITY,
    };
    let mut eps = 1.0;
    let first = log_ratio(eps);
    let up = first.is_finite() && first > 0.5f64.ln();
    let factor: f64 = if up { 2.0 } else { 0.5 };
    for _ in 0..60 {
        let lr = log_ratio(eps * factor);
        let crossed = if up { !(lr > 0.5f64.ln()) } else { lr.is_finite() && lr > 0.5f64.ln() };
        eps *= factor;
        if crossed {
            break;
        }
    }
    eps.clamp(1e-10, 1e3)
}

struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps_bar: f64,
    iteration: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(step_size: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * step_size).ln(),
            target,
            h_bar: 0.0,
            log_eps_bar: 0.0,
            iteration: 0.0,
        }
    }

    /// Returns the next step size to use.
    fn update(&mut self, accept_prob: f64) -> f64 {
        self.iteration += 1.0;
        let m = self.iteration;
        let w = 1.0 / (m + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        let log_eps = self.mu - m.sqrt() / Self::GAMMA * self.h_bar;
        let eta = m.powf(-Self::KAPPA);
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar;
        log_eps.exp()
    }

    fn final_step_size(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Running mean/variance per coordinate.
struct Welford {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn add(&mut self, x: &[f64]) {
        self.count += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / self.count;
            *s += delta * (v - *m);
        }
    }

    /// Variance shrunk towards `1e-3` for short windows.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.count;
        self.m2
            .iter()
            .map(|s| {
                let var = s / (n - 1.0).max(1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Iteration indices `[start, end)` of the two mass-adaptation windows.
fn mass_windows(warmup: usize) -> Vec<(usize, usize)> {
    if warmup < 20 {
        return Vec::new();
    }
    let init = (warmup as f64 * 0.15) as usize;
    let term = (warmup as f64 * 0.1) as usize;
    let mid = warmup / 2;
    vec![(init, mid), (mid, warmup - term)]
}

/// Runs a single NUTS chain from `init`.
pub fn nuts_sample<T: LogDensity + ?Sized>(target: &T, init: &[f64], config: &NutsConfig) -> Result<NutsOutput> {
    config.validate()?;
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: init.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut inv_mass = match &config.initial_inv_mass {
        Some(m) if m.len() == dim && m.iter().all(|v| v.is_finite() && *v > 0.0) => m.clone(),
        Some(m) => {
            return Err(Error::InvalidConfig(format!(
                "initial inverse mass must hold {dim} positive entries, got {}",
                m.len()
            )))
        }
        None => vec![1.0; dim],
    };
    let mut current = PhasePoint::new(target, init.to_vec(), vec![0.0; dim])
        .map_err(|e| Error::NonFiniteModel(format!("target is not finite at the initial point: {e}")))?;

    let mut step_size = find_reasonable_step_size(target, &current, &inv_mass, &mut rng);
    let mut adapter = DualAveraging::new(step_size, config.target_accept_prob);
    let windows = mass_windows(config.warmup_steps);
    let mut window_stats: Option<Welford> = None;
    let mut leapfrog_counts = Vec::with_capacity(config.warmup_steps + config.post_warmup_steps);

    for it in 0..config.warmup_steps {
        if windows.iter().any(|&(start, _)| start == it) {
            window_stats = Some(Welford::new(dim));
        }
        let (next, stats) = transition(target, &current, step_size, &inv_mass, config, &mut rng);
        current = next;
        leapfrog_counts.push(stats.n_leapfrog);
        step_size = adapter.update(stats.accept_prob);
        if let Some(w) = window_stats.as_mut() {
            w.add(&current.position);
        }
        if windows.iter().any(|&(_, end)| end == it + 1) {
            if let Some(w) = window_stats.take() {
                if w.count >= 3.0 {
                    inv_mass = w.regularized_variance();
                    step_size = find_reasonable_step_size(target, &current, &inv_mass, &mut rng);
                    adapter = DualAveraging::new(step_size, config.target_accept_prob);
                }
            }
        }
    }
    if config.warmup_steps > 0 && adapter.iteration > 0.0 {
        step_size = adapter.final_step_size();
    }

    let mut draws = Vec::with_capacity(config.retained());
    let mut divergences = 0;
    let mut accept_total = 0.0;
    for it in 0..config.post_warmup_steps {
        let (next, stats) = transition(target, &current, step_size, &inv_mass, config, &mut rng);
        current = next;
        leapfrog_counts.push(stats.n_leapfrog);
        divergences += usize::from(stats.divergent);
        accept_total += stats.accept_prob;
        if (it + 1) % config.thinning == 0 {
            draws.push(current.position.clone());
        }
    }

    let warning = (2 * divergences > config.post_warmup_steps).then(|| {
        format!(
            "{divergences} of {} post-warmup transitions diverged",
            config.post_warmup_steps
        )
    });
    Ok(NutsOutput {
        draws,
        diagnostics: SamplerDiagnostics {
            divergences,
            mean_accept_prob: accept_total / config.post_warmup_steps as f64,
            step_size,
            inv_mass,
            max_leapfrog_steps: leapfrog_counts.iter().copied().max().unwrap_or(0),
            warning,
        },
        leapfrog_counts,
    })
}

/// NUTS posterior over any [`ModelKind`], returned as factorized draws.
pub fn fit_model_nuts(
    history: &EvaluationHistory,
    kind: ModelKind,
    kernel: Kernel,
    config: &NutsConfig,
) -> Result<PosteriorSampleSet> {
    let target = ModelTarget::new(history, kind, kernel)?;
    let init = target.initial_position();
    let out = nuts_sample(&target, &init, config)?;
    let hypers = out
        .draws
        .iter()
        .map(|d| target.hyperparameters(d))
        .collect::<Result<Vec<_>>>()?;
    PosteriorSampleSet::from_hyperparameters(history, hypers, kernel, out.diagnostics)
}

/// SAAS posterior samples, chain started at the prior medians.
pub fn fit_saas_nuts(
    history: &EvaluationHistory,
    prior: &SaasPriorConfig,
    kernel: Kernel,
    config: &NutsConfig,
) -> Result<PosteriorSampleSet> {
    fit_model_nuts(history, ModelKind::Saas(*prior), kernel, config)
}
