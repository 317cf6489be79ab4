use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saasbo::{sobol_points, SobolStream};

fn gray(k: u64) -> u64 {
    k ^ (k >> 1)
}

// First 16 unscrambled points in 5 dimensions, from scipy.stats.qmc.Sobol
// (Gray-code order, starting at the origin).
const SCIPY_D5: [[f64; 5]; 16] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [0.5, 0.5, 0.5, 0.5, 0.5],
    [0.75, 0.25, 0.25, 0.25, 0.75],
    [0.25, 0.75, 0.75, 0.75, 0.25],
    [0.375, 0.375, 0.625, 0.875, 0.375],
    [0.875, 0.875, 0.125, 0.375, 0.875],
    [0.625, 0.125, 0.875, 0.625, 0.625],
    [0.125, 0.625, 0.375, 0.125, 0.125],
    [0.1875, 0.3125, 0.9375, 0.4375, 0.5625],
    [0.6875, 0.8125, 0.4375, 0.9375, 0.0625],
    [0.9375, 0.0625, 0.6875, 0.1875, 0.3125],
    [0.4375, 0.5625, 0.1875, 0.6875, 0.8125],
    [0.3125, 0.1875, 0.3125, 0.5625, 0.9375],
    [0.8125, 0.6875, 0.8125, 0.0625, 0.4375],
    [0.5625, 0.4375, 0.0625, 0.8125, 0.1875],
    [0.0625, 0.9375, 0.5625, 0.3125, 0.6875],
];

// Dimensions 1100..=1110 (zero-based) of the same generator, first 8 points.
const SCIPY_HIGH: [[f64; 11]; 8] = [
    [0.0; 11],
    [0.5; 11],
    [0.25, 0.75, 0.25, 0.75, 0.25, 0.25, 0.75, 0.75, 0.75, 0.25, 0.75],
    [0.75, 0.25, 0.75, 0.25, 0.75, 0.75, 0.25, 0.25, 0.25, 0.75, 0.25],
    [0.125, 0.875, 0.125, 0.125, 0.875, 0.125, 0.875, 0.375, 0.625, 0.875, 0.875],
    [0.625, 0.375, 0.625, 0.625, 0.375, 0.625, 0.375, 0.875, 0.125, 0.375, 0.375],
    [0.375, 0.125, 0.375, 0.875, 0.625, 0.375, 0.125, 0.625, 0.375, 0.625, 0.125],
    [0.875, 0.625, 0.875, 0.375, 0.125, 0.875, 0.625, 0.125, 0.875, 0.125, 0.625],
];

#[test]
fn matches_scipy_in_low_dimensions() {
    let s = SobolStream::new(5, None).unwrap();
    for (k, want) in SCIPY_D5.iter().enumerate() {
        assert_eq!(s.point_at(gray(k as u64)), want.to_vec(), "point {k}");
    }
}

#[test]
fn matches_scipy_at_the_top_of_the_table() {
    let s = SobolStream::new(1111, None).unwrap();
    for (k, want) in SCIPY_HIGH.iter().enumerate() {
        let p = s.point_at(gray(k as u64));
        assert_eq!(&p[1100..1111], &want[..], "point {k}");
    }
}

#[test]
fn stream_skips_the_origin() {
    let pts = sobol_points(3, 5, None).unwrap();
    assert_eq!(pts[0], vec![0.5; 5]);
}

/// Every elementary box `[i/2^a, (i+1)/2^a) x [j/2^b, (j+1)/2^b)` with
/// `a + b = m` holds exactly one of `points`.
fn is_two_dim_net(points: &[Vec<f64>], d0: usize, d1: usize, m: u32) -> bool {
    (0..=m).all(|a| {
        let b = m - a;
        let mut counts = vec![0usize; 1 << m];
        for p in points {
            let i = (p[d0] * f64::from(1u32 << a)) as usize;
            let j = (p[d1] * f64::from(1u32 << b)) as usize;
            counts[(i << b) | j] += 1;
        }
        counts.iter().all(|&c| c == 1)
    })
}

fn is_stratified(points: &[Vec<f64>], d: usize, m: u32) -> bool {
    let mut counts = vec![0usize; 1 << m];
    for p in points {
        counts[(p[d] * f64::from(1u32 << m)) as usize] += 1;
    }
    counts.iter().all(|&c| c == 1)
}

#[test]
fn blocks_are_nets() {
    for seed in [None, Some(3), Some(77)] {
        let s = SobolStream::new(10, seed).unwrap();
        for m in 1..=6u32 {
            for block in 0..3u64 {
                let start = block << m;
                let pts: Vec<Vec<f64>> = (start..start + (1 << m)).map(|i| s.point_at(i)).collect();
                assert!(is_two_dim_net(&pts, 0, 1, m), "seed {seed:?} m {m} block {block}");
                for d in 0..10 {
                    assert!(is_stratified(&pts, d, m), "seed {seed:?} m {m} dim {d}");
                }
            }
        }
    }
}

/// Squared L2-star discrepancy (Warnock's formula).
fn l2_star_sq(points: &[Vec<f64>]) -> f64 {
    let n = points.len() as f64;
    let d = points[0].len() as i32;
    let single: f64 = points.iter().map(|p| p.iter().map(|x| 1.0 - x * x).product::<f64>()).sum();
    let mut pair = 0.0;
    for p in points {
        for q in points {
            pair += p.iter().zip(q).map(|(a, b)| 1.0 - a.max(*b)).product::<f64>();
        }
    }
    3f64.powi(-d) - 2f64.powi(1 - d) / n * single + pair / (n * n)
}

#[test]
fn lower_discrepancy_than_iid() {
    let sobol = sobol_points(256, 5, Some(9)).unwrap();
    let qmc = l2_star_sq(&sobol);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let iid: f64 = (0..20)
        .map(|_| {
            let pts: Vec<Vec<f64>> = (0..256).map(|_| (0..5).map(|_| rng.gen()).collect()).collect();
            l2_star_sq(&pts)
        })
        .sum::<f64>()
        / 20.0;
    assert!(qmc < 0.5 * iid, "sobol {qmc:e} vs iid {iid:e}");
}

#[test]
fn rejects_bad_requests() {
    assert!(SobolStream::new(0, None).is_err());
    assert!(SobolStream::new(1112, None).is_err());
    assert!(sobol_points(0, 3, None).is_err());
}

proptest! {
    #[test]
    fn points_in_unit_cube(seed in any::<u64>(), dim in 1usize..40, n in 1usize..64) {
        let pts = sobol_points(n, dim, Some(seed)).unwrap();
        prop_assert_eq!(pts.len(), n);
        for p in &pts {
            prop_assert_eq!(p.len(), dim);
            prop_assert!(p.iter().all(|v| (0.0..1.0).contains(v)));
        }
    }

    #[test]
    fn resumed_stream_continues_the_sequence(seed in any::<u64>(), cut in 1u64..50, extra in 1usize..20) {
        let all = sobol_points(cut as usize + extra, 4, Some(seed)).unwrap();
        let mut resumed = SobolStream::with_cursor(4, Some(seed), cut + 1).unwrap();
        prop_assert_eq!(resumed.take_points(extra), all[cut as usize..].to_vec());
    }

    #[test]
    fn same_seed_same_points(seed in any::<u64>()) {
        prop_assert_eq!(sobol_points(8, 6, Some(seed)).unwrap(), sobol_points(8, 6, Some(seed)).unwrap());
    }
}
