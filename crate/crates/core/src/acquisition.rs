//! Expected improvement, its average over posterior draws, and the
//! candidate-then-refine maximizer.
//!
//! Everything here works in standardized target units.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::gp::{cross_covariance, predict_std_unclamped, EvaluationHistory, GpFactorization, SaasHyperparameters};
use crate::samples::PosteriorSampleSet;
use crate::sobol::SobolStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    pub candidate_count: usize,
    pub restart_count: usize,
    pub max_refine_evals: usize,
    pub quasi_newton_memory: usize,
    /// Stop when the projected gradient's max-norm falls below this.
    pub convergence_tol: f64,
    pub sigma_floor: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            candidate_count: 5000,
            restart_count: 3,
            max_refine_evals: 100,
            quasi_newton_memory: 10,
            convergence_tol: 1e-8,
            sigma_floor: 1e-10,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restart_count == 0 || self.candidate_count < self.restart_count {
            return Err(Error::InvalidConfig(format!(
                "need candidate_count ({}) >= restart_count ({}) >= 1",
                self.candidate_count, self.restart_count
            )));
        }
        if self.max_refine_evals == 0 {
            return Err(Error::InvalidConfig("max_refine_evals must be at least 1".into()));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::InvalidConfig("sigma_floor must be positive".into()));
        }
        Ok(())
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Closed-form EI for a Gaussian with mean `mu` and standard deviation
/// `sigma`, together with `dEI/dμ` and `dEI/dσ`.
pub fn expected_improvement(mu: f64, sigma: f64, y_min: f64, sigma_floor: f64) -> (f64, f64, f64) {
    let s = sigma.max(sigma_floor);
    let imp = y_min - mu;
    let z = imp / s;
    let (cdf, pdf) = (normal_cdf(z), normal_pdf(z));
    let ei = imp * cdf + sigma * pdf;
    if !(ei > 0.0) {
        return (0.0, 0.0, 0.0);
    }
    // dZ/dμ = -1/s; dφ/dZ = -Zφ.
    let d_mu = -cdf - imp * pdf / s + sigma * z * pdf / s;
    // Above the floor the Z-dependence cancels; below it Z ignores σ. Either
    // way dEI/dσ = φ(Z).
    (ei, d_mu, pdf)
}

/// EI of one hyperparameter draw at `x`.
pub fn ei_single(
    x: &[f64],
    y_min_std: f64,
    history: &EvaluationHistory,
    psi: &SaasHyperparameters,
    fact: &GpFactorization,
    sigma_floor: f64,
) -> f64 {
    let (mu, var) = predict_std_unclamped(x, history, psi, fact);
    expected_improvement(mu, var.max(0.0).sqrt(), y_min_std, sigma_floor).0
}

/// Mean of [`ei_single`] over the draws.
pub fn ei_averaged(
    x: &[f64],
    y_min_std: f64,
    history: &EvaluationHistory,
    samples: &PosteriorSampleSet,
    sigma_floor: f64,
) -> f64 {
    let total: f64 = samples
        .draws()
        .iter()
        .map(|d| ei_single(x, y_min_std, history, &d.hyper, &d.factorization, sigma_floor))
        .sum();
    total / samples.len() as f64
}

/// EI of one draw and its gradient with respect to `x`.
pub fn ei_single_with_gradient(
    x: &[f64],
    y_min_std: f64,
    history: &EvaluationHistory,
    psi: &SaasHyperparameters,
    fact: &GpFactorization,
    sigma_floor: f64,
    grad: &mut [f64],
) -> f64 {
    grad.fill(0.0);
    let (k, r2s) = cross_covariance(x, history, psi, fact.kernel());
    let mu = k.dot(fact.alpha());
    let ck = fact.solve(&k);
    let var = psi.kernel_variance - k.dot(&ck);
    let sigma = var.max(0.0).sqrt();
    let (ei, d_mu, d_sigma) = expected_improvement(mu, sigma, y_min_std, sigma_floor);
    if ei == 0.0 {
        return 0.0;
    }
    // dσ/dk = -(C k)/σ, dμ/dk = α.
    let d_sigma_dk = if sigma > 0.0 { d_sigma / sigma } else { 0.0 };
    let alpha = fact.alpha();
    let kernel = fact.kernel();
    for (n, row) in history.rows().enumerate() {
        let w = d_mu * alpha[n] - d_sigma_dk * ck[n];
        if w == 0.0 {
            continue;
        }
        // dk_n/dx_d = σ_k² κ'(r²) · 2 ρ_d (x_d - X_nd)
        let g = w * psi.kernel_variance * kernel.correlation_deriv(r2s[n]) * 2.0;
        for d in 0..x.len() {
            grad[d] += g * psi.inv_sq_lengthscales[d] * (x[d] - row[d]);
        }
    }
    ei
}

/// Averaged EI and its exact gradient.
pub fn ei_averaged_with_gradient(
    x: &[f64],
    y_min_std: f64,
    history: &EvaluationHistory,
    samples: &PosteriorSampleSet,
    sigma_floor: f64,
    grad: &mut [f64],
) -> f64 {
    grad.fill(0.0);
    let mut scratch = vec![0.0; x.len()];
    let mut total = 0.0;
    for d in samples.draws() {
        total += ei_single_with_gradient(x, y_min_std, history, &d.hyper, &d.factorization, sigma_floor, &mut scratch);
        for (g, s) in grad.iter_mut().zip(&scratch) {
            *g += s;
        }
    }
    let l = samples.len() as f64;
    grad.iter_mut().for_each(|g| *g /= l);
    total / l
}

pub fn ei_gradient(
    x: &[f64],
    y_min_std: f64,
    history: &EvaluationHistory,
    samples: &PosteriorSampleSet,
    sigma_floor: f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    ei_averaged_with_gradient(x, y_min_std, history, samples, sigma_floor, &mut grad);
    grad
}

/// Result of one bounded refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

fn project(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Limited-memory quasi-Newton descent restricted to `[0, 1]^D` by
/// gradient projection. `f` returns the objective and writes its gradient.
///
/// Iterates never leave the box; the returned point is the best one seen.
pub fn projected_lbfgs<F>(mut f: F, x0: &[f64], memory: usize, max_evals: usize, tol: f64) -> Option<Refinement>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = x0.len();
    let mut x = x0.to_vec();
    project(&mut x);
    let mut g = vec![0.0; dim];
    let mut fx = f(&x, &mut g);
    let mut evals = 1;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut hist_s: Vec<Vec<f64>> = Vec::new();
    let mut hist_y: Vec<Vec<f64>> = Vec::new();
    let mut g_new = vec![0.0; dim];

    while evals < max_evals {
        let pg_norm = (0..dim)
            .map(|i| ((x[i] - g[i]).clamp(0.0, 1.0) - x[i]).abs())
            .fold(0.0, f64::max);
        if pg_norm <= tol {
            break;
        }
        let active: Vec<bool> = (0..dim)
            .map(|i| (x[i] <= 0.0 && g[i] > 0.0) || (x[i] >= 1.0 && g[i] < 0.0))
            .collect();

        // Two-loop recursion on the free coordinates.
        let mut q: Vec<f64> = (0..dim).map(|i| if active[i] { 0.0 } else { g[i] }).collect();
        let mut rhos = Vec::with_capacity(hist_s.len());
        let mut alphas = vec![0.0; hist_s.len()];
        for (j, (s, y)) in hist_s.iter().zip(&hist_y).enumerate().rev() {
            let rho = 1.0 / dot(s, y);
            let a = rho * dot(s, &q);
            axpy(-a, y, &mut q);
            alphas[j] = a;
            rhos.push((j, rho));
        }
        if let (Some(s), Some(y)) = (hist_s.last(), hist_y.last()) {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for &(j, rho) in rhos.iter().rev() {
            let b = rho * dot(&hist_y[j], &q);
            axpy(alphas[j] - b, &hist_s[j], &mut q);
        }
        let mut dir: Vec<f64> = (0..dim).map(|i| if active[i] { 0.0 } else { -q[i] }).collect();
        if !(dot(&dir, &g) < 0.0) {
            hist_s.clear();
            hist_y.clear();
            dir = (0..dim).map(|i| if active[i] { 0.0 } else { -g[i] }).collect();
        }
        let mut t = if hist_s.is_empty() {
            (1.0 / dir.iter().map(|v| v.abs()).fold(0.0, f64::max)).min(1.0)
        } else {
            1.0
        };

        // Backtracking along the projected path.
        let mut accepted = None;
        while evals < max_evals {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            project(&mut trial);
            let f_trial = f(&trial, &mut g_new);
            evals += 1;
            let decrease: f64 = g.iter().zip(trial.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if f_trial.is_finite() && g_new.iter().all(|v| v.is_finite()) && f_trial <= fx + 1e-4 * decrease {
                accepted = Some((trial, f_trial));
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                break;
            }
        }
        let Some((x_new, f_new)) = accepted else {
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            hist_s.push(s);
            hist_y.push(y);
            if hist_s.len() > memory {
                hist_s.remove(0);
                hist_y.remove(0);
            }
        }
        let improvement = fx - f_new;
        x = x_new;
        fx = f_new;
        std::mem::swap(&mut g, &mut g_new);
        if improvement.abs() <= f64::EPSILON * fx.abs().max(1.0) {
            break;
        }
    }
    Some(Refinement {
        x,
        value: fx,
        evaluations: evals,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// The chosen query and how it was found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub x: Vec<f64>,
    pub ei: f64,
    /// Largest EI over the raw candidates.
    pub best_candidate_ei: f64,
    /// Sobol index (0-based within the candidate set) of the best candidate.
    pub best_candidate_index: usize,
    pub failed_refinements: usize,
}

/// Indices of the `k` largest values, ties going to the lower index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Maximizes averaged EI: scrambled Sobol candidates, then bounded
/// refinement from the best few.
pub fn propose_next(
    history: &EvaluationHistory,
    samples: &PosteriorSampleSet,
    config: &AcquisitionConfig,
    seed: u64,
) -> Result<Proposal> {
    config.validate()?;
    if history.is_empty() || samples.is_empty() {
        return Err(Error::InvalidInput("proposal needs data and posterior draws".into()));
    }
    let dim = history.dim();
    let y_min = history.y_min_std();
    let floor = config.sigma_floor;
    let stream = SobolStream::new(dim, Some(seed))?;
    let candidates: Vec<Vec<f64>> = (0..config.candidate_count as u64).map(|i| stream.point_at(i + 1)).collect();
    let values: Vec<f64> = candidates
        .par_iter()
        .map(|c| ei_averaged(c, y_min, history, samples, floor))
        .collect();
    let starts = top_k_indices(&values, config.restart_count);
    let best_idx = starts[0];

    let refined: Vec<Option<Refinement>> = starts
        .par_iter()
        .map(|&i| {
            let start_value = values[i];
            if !(start_value > 0.0) {
                return None;
            }
            let objective = |x: &[f64], g: &mut [f64]| {
                let v = ei_averaged_with_gradient(x, y_min, history, samples, floor, g);
                g.iter_mut().for_each(|gi| *gi = -*gi / start_value);
                -v / start_value
            };
            projected_lbfgs(
                objective,
                &candidates[i],
                config.quasi_newton_memory,
                config.max_refine_evals,
                config.convergence_tol,
            )
        })
        .collect();

    let mut best = Proposal {
        x: candidates[best_idx].clone(),
        ei: values[best_idx],
        best_candidate_ei: values[best_idx],
        best_candidate_index: best_idx,
        failed_refinements: 0,
    };
    for (slot, r) in starts.iter().zip(refined) {
        match r {
            Some(r) => {
                // Re-evaluate without the gradient path so comparisons use
                // the same arithmetic as the candidate scan.
                let v = ei_averaged(&r.x, y_min, history, samples, floor);
                if v > best.ei {
                    best.x = r.x;
                    best.ei = v;
                }
            }
            None if values[*slot] > 0.0 => best.failed_refinements += 1,
            None => {}
        }
    }
    Ok(best)
}

/// EI under a single fixed hyperparameter set (used for fallbacks).
pub fn ei_values_single(
    points: &[Vec<f64>],
    history: &EvaluationHistory,
    psi: &SaasHyperparameters,
    fact: &GpFactorization,
    sigma_floor: f64,
) -> Vec<f64> {
    let y_min = history.y_min_std();
    points
        .iter()
        .map(|p| ei_single(p, y_min, history, psi, fact, sigma_floor))
        .collect()
}
