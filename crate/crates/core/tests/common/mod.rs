//! Independent oracles shared by the integration suites and the acceptance
//! harness. Nothing here calls into the library's linear algebra.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use saasbo::{EvaluationHistory, Kernel, SaasHyperparameters};

/// A random GP problem: history plus one hyperparameter setting.
pub struct Instance {
    pub history: EvaluationHistory,
    pub psi: SaasHyperparameters,
    pub kernel: Kernel,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=12);
    let d = rng.gen_range(1..=8);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen()).collect()).collect();
    let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>().sin() + 0.1 * rng.gen::<f64>())
        .collect();
    let noise = [1e-6, 1e-4, 1e-2][rng.gen_range(0..3)];
    let psi = SaasHyperparameters::new(
        rng.gen_range(-1.0f64..1.0).exp(),
        rng.gen_range(0.01..1.0),
        (0..d).map(|_| rng.gen_range(-2.0f64..1.5).exp()).collect(),
        noise,
    )
    .unwrap();
    let kernel = if rng.gen_bool(0.5) { Kernel::Rbf } else { Kernel::Matern52 };
    Instance {
        history: EvaluationHistory::from_rows(&rows, &y).unwrap(),
        psi,
        kernel,
    }
}

pub fn kernel_oracle(kernel: Kernel, x: &[f64], y: &[f64], psi: &SaasHyperparameters) -> f64 {
    let r2: f64 = x
        .iter()
        .zip(y)
        .zip(&psi.inv_sq_lengthscales)
        .map(|((a, b), rho)| rho * (a - b) * (a - b))
        .sum();
    match kernel {
        Kernel::Rbf => psi.kernel_variance * (-0.5 * r2).exp(),
        Kernel::Matern52 => {
            let r = (5.0 * r2).sqrt();
            psi.kernel_variance * (1.0 + r + r * r / 3.0) * (-r).exp()
        }
    }
}

pub type Matrix = Vec<Vec<f64>>;

/// Covariance of the listed rows with `diag` added on the diagonal.
pub fn gram(rows: &[Vec<f64>], kernel: Kernel, psi: &SaasHyperparameters, diag: f64) -> Matrix {
    let n = rows.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            k[i][j] = kernel_oracle(kernel, &rows[i], &rows[j], psi);
        }
        k[i][i] += diag;
    }
    k
}

/// Gauss–Jordan inversion with partial pivoting; also returns `log |det|`.
pub fn invert(a: &Matrix) -> (Matrix, f64) {
    let n = a.len();
    let mut m: Matrix = a.clone();
    let mut inv: Matrix = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let mut log_det = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, p);
        inv.swap(c, p);
        let pivot = m[c][c];
        log_det += pivot.abs().ln();
        for j in 0..n {
            m[c][j] /= pivot;
            inv[c][j] /= pivot;
        }
        for i in 0..n {
            if i != c {
                let f = m[i][c];
                if f != 0.0 {
                    for j in 0..n {
                        m[i][j] -= f * m[c][j];
                        inv[i][j] -= f * inv[c][j];
                    }
                }
            }
        }
    }
    (inv, log_det)
}

pub fn mat_vec(a: &Matrix, v: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

/// `A⁻¹ b` from a precomputed inverse, with one step of iterative
/// refinement against `A` itself.
pub fn solve(a: &Matrix, inv: &Matrix, b: &[f64]) -> Vec<f64> {
    let mut x = mat_vec(inv, b);
    let ax = mat_vec(a, &x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(u, v)| u - v).collect();
    for (xi, d) in x.iter_mut().zip(mat_vec(inv, &r)) {
        *xi += d;
    }
    x
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn rows_of(h: &EvaluationHistory) -> Vec<Vec<f64>> {
    h.rows().map(<[f64]>::to_vec).collect()
}

/// `log N(y | 0, K + diag I)` from the dense inverse.
pub fn mll_oracle(h: &EvaluationHistory, kernel: Kernel, psi: &SaasHyperparameters, diag: f64) -> f64 {
    let k = gram(&rows_of(h), kernel, psi, diag);
    let (inv, log_det) = invert(&k);
    let y = h.y_std();
    let n = y.len() as f64;
    -0.5 * dot(y, &solve(&k, &inv, y)) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

/// Latent predictive mean and variance in standardized units.
pub fn predict_oracle(
    h: &EvaluationHistory,
    kernel: Kernel,
    psi: &SaasHyperparameters,
    diag: f64,
    x: &[f64],
) -> (f64, f64) {
    let rows = rows_of(h);
    let g = gram(&rows, kernel, psi, diag);
    let (inv, _) = invert(&g);
    let k: Vec<f64> = rows.iter().map(|r| kernel_oracle(kernel, x, r, psi)).collect();
    let mean = dot(&k, &solve(&g, &inv, h.y_std()));
    let var = kernel_oracle(kernel, x, x, psi) - dot(&k, &solve(&g, &inv, &k));
    (mean, var)
}

/// Leave-one-out log likelihood by refitting on every `N - 1` subset with
/// the full-data standardization.
pub fn loo_oracle(h: &EvaluationHistory, kernel: Kernel, psi: &SaasHyperparameters, diag: f64) -> f64 {
    let rows = rows_of(h);
    let y = h.y_std();
    let mut total = 0.0;
    for n in 0..rows.len() {
        let keep: Vec<usize> = (0..rows.len()).filter(|&i| i != n).collect();
        let sub: Vec<Vec<f64>> = keep.iter().map(|&i| rows[i].clone()).collect();
        let ys: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
        let g = gram(&sub, kernel, psi, diag);
        let (inv, _) = invert(&g);
        let k: Vec<f64> = sub.iter().map(|r| kernel_oracle(kernel, &rows[n], r, psi)).collect();
        let mean = dot(&k, &solve(&g, &inv, &ys));
        let var = kernel_oracle(kernel, &rows[n], &rows[n], psi) + diag - dot(&k, &solve(&g, &inv, &k));
        total += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (y[n] - mean).powi(2) / (2.0 * var);
    }
    total
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Richardson-extrapolated central differences, `(4 D(h/2) - D(h)) / 3`,
/// accurate to `O(h⁴)`. Lets `h` stay large enough to avoid roundoff on
/// badly scaled objectives.
pub fn richardson_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let coarse = central_diff(&f, x, h);
    let fine = central_diff(&f, x, h / 2.0);
    fine.iter().zip(&coarse).map(|(a, b)| (4.0 * a - b) / 3.0).collect()
}

/// `max_i |a_i - b_i| / max(max_i |b_i|, floor)`.
pub fn rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(floor, f64::max);
    num / den
}

/// Standard normal CDF from `erfc`, written out so the oracle does not share
/// code with the library.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Asymptotic Kolmogorov–Smirnov p-value of the one-sample statistic.
pub fn ks_pvalue(sample: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    (d, p.clamp(0.0, 1.0))
}
