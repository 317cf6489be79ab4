mod common;

use common::*;
use saasbo::{nuts_sample, LogDensity, NutsConfig, Result};

/// Independent Gaussian with the given standard deviations.
struct Gaussian {
    sd: Vec<f64>,
}

impl LogDensity for Gaussian {
    fn dim(&self) -> usize {
        self.sd.len()
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let mut v = 0.0;
        for i in 0..x.len() {
            let s2 = self.sd[i] * self.sd[i];
            v -= 0.5 * x[i] * x[i] / s2;
            grad[i] = -x[i] / s2;
        }
        Ok(v)
    }
}

fn config(warmup: usize, draws: usize, seed: u64) -> NutsConfig {
    NutsConfig {
        warmup_steps: warmup,
        post_warmup_steps: draws,
        thinning: 1,
        max_tree_depth: 10,
        ..NutsConfig::default().with_seed(seed)
    }
}

fn moments(draws: &[Vec<f64>], i: usize) -> (f64, f64) {
    let n = draws.len() as f64;
    let mean = draws.iter().map(|d| d[i]).sum::<f64>() / n;
    let var = draws.iter().map(|d| (d[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn standard_gaussian_moments_and_ks() {
    let target = Gaussian { sd: vec![1.0, 1.0] };
    let out = nuts_sample(&target, &[0.5, -0.5], &config(500, 2000, 1)).unwrap();
    assert_eq!(out.draws.len(), 2000);
    for i in 0..2 {
        let (mean, var) = moments(&out.draws, i);
        assert!(mean.abs() <= 0.1, "coordinate {i} mean {mean}");
        assert!((var - 1.0).abs() <= 0.15, "coordinate {i} variance {var}");
        let xs: Vec<f64> = out.draws.iter().map(|d| d[i]).collect();
        let (d, p) = ks_pvalue(&xs, std_normal_cdf);
        assert!(p > 0.01, "coordinate {i}: KS statistic {d}, p {p}");
    }
    assert_eq!(out.diagnostics.divergences, 0);
}

#[test]
fn scaled_gaussian_adapts_step_and_mass() {
    let target = Gaussian { sd: vec![0.1, 1.0, 10.0] };
    let out = nuts_sample(&target, &[0.0; 3], &config(1000, 2000, 7)).unwrap();
    for (i, sd) in [0.1, 1.0, 10.0].iter().enumerate() {
        let (mean, var) = moments(&out.draws, i);
        assert!(mean.abs() < 0.2 * sd, "coordinate {i} mean {mean}");
        assert!((var / (sd * sd) - 1.0).abs() < 0.2, "coordinate {i} variance {var}");
    }
    let m = &out.diagnostics.inv_mass;
    assert!(m[2] / m[0] > 1000.0, "inverse mass {m:?}");
    assert!(out.diagnostics.mean_accept_prob > 0.6);
}

#[test]
fn trajectories_respect_the_depth_cap() {
    let target = Gaussian { sd: vec![1.0; 4] };
    let cfg = NutsConfig {
        max_tree_depth: 3,
        ..config(100, 200, 3)
    };
    let out = nuts_sample(&target, &[0.0; 4], &cfg).unwrap();
    assert!(out.leapfrog_counts.iter().all(|&c| c <= 1 << 3));
    assert_eq!(out.leapfrog_counts.len(), 300);
}

#[test]
fn same_seed_same_chain() {
    let target = Gaussian { sd: vec![1.0, 2.0] };
    let a = nuts_sample(&target, &[0.0; 2], &config(50, 50, 11)).unwrap();
    let b = nuts_sample(&target, &[0.0; 2], &config(50, 50, 11)).unwrap();
    let c = nuts_sample(&target, &[0.0; 2], &config(50, 50, 12)).unwrap();
    assert_eq!(a.draws, b.draws);
    assert_ne!(a.draws, c.draws);
}
