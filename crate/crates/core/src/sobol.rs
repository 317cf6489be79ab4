//! Base-2 Sobol sequences with optional nested-uniform (Owen) scrambling.
//!
//! Conventions:
//! * Points are generated in natural index order `n = 0, 1, 2, ...`, with
//!   point `n` equal to the XOR of the direction numbers selected by the
//!   binary digits of `n`. Gray-code ordered generators emit the same
//!   points permuted within each block of `2^m`.
//! * Streams start at index 1 by default, so the all-zeros point of the
//!   unscrambled sequence is never returned. In one dimension the
//!   unscrambled stream is `0.5, 0.25, 0.75, 0.125, 0.625, ...`.
//! * Direction numbers come from the Joe–Kuo `new-joe-kuo-6.21201` table
//!   truncated to its first 1111 dimensions, with 32 output bits.
//! * Scrambling flips digit `b` of a coordinate according to a hash of
//!   `(seed, dimension, b, digits above b)`, which is the nested-uniform
//!   scheme realized with a counter-based hash instead of stored trees.

use std::sync::OnceLock;

use crate::error::{Error, Result};

const BITS: usize = 32;
const SCALE: f64 = 1.0 / 4_294_967_296.0;
const TABLE: &str = include_str!("../data/new-joe-kuo-6.1111.txt");

/// Largest supported dimension.
pub const MAX_DIMENSION: usize = 1111;

fn directions() -> &'static [[u32; BITS]] {
    static CELL: OnceLock<Vec<[u32; BITS]>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut out = Vec::with_capacity(MAX_DIMENSION);
        let mut first = [0u32; BITS];
        for (k, v) in first.iter_mut().enumerate() {
            *v = 1 << (BITS - 1 - k);
        }
        out.push(first);
        for line in TABLE.lines().skip(1) {
            let nums: Vec<u32> = line.split_whitespace().map(|t| t.parse().expect("direction table")).collect();
            let (s, a) = (nums[1] as usize, nums[2]);
            let m = &nums[3..3 + s];
            let mut v = [0u32; BITS];
            for k in 0..BITS {
                v[k] = if k < s {
                    m[k] << (BITS - 1 - k)
                } else {
                    let mut x = v[k - s] ^ (v[k - s] >> s);
                    for i in 1..s {
                        if (a >> (s - 1 - i)) & 1 == 1 {
                            x ^= v[k - i];
                        }
                    }
                    x
                };
            }
            out.push(v);
        }
        assert_eq!(out.len(), MAX_DIMENSION);
        out
    })
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn owen_scramble(x: u32, seed: u64, dim: usize) -> u32 {
    let base = mix(seed ^ mix(0x9e37_79b9_7f4a_7c15 ^ dim as u64));
    let mut out = 0u32;
    for b in 0..BITS {
        let prefix = if b == 0 { 0 } else { (x >> (BITS - b)) as u64 };
        let h = mix(base ^ mix(((b as u64) << 32) ^ prefix));
        let bit = (x >> (BITS - 1 - b)) & 1;
        out |= (bit ^ (h as u32 & 1)) << (BITS - 1 - b);
    }
    out
}

/// A resumable Sobol point stream.
#[derive(Debug, Clone)]
pub struct SobolStream {
    dim: usize,
    seed: Option<u64>,
    cursor: u64,
}

impl SobolStream {
    /// Stream starting at index 1.
    pub fn new(dim: usize, seed: Option<u64>) -> Result<Self> {
        Self::with_cursor(dim, seed, 1)
    }

    pub fn with_cursor(dim: usize, seed: Option<u64>, cursor: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("Sobol dimension must be at least 1".into()));
        }
        if dim > MAX_DIMENSION {
            return Err(Error::SobolDimension {
                requested: dim,
                limit: MAX_DIMENSION,
            });
        }
        if cursor >= 1 << BITS {
            return Err(Error::InvalidInput("Sobol index exceeds 2^32".into()));
        }
        Ok(Self { dim, seed, cursor })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    /// Point at an arbitrary index, independent of the cursor.
    pub fn point_at(&self, index: u64) -> Vec<f64> {
        let table = directions();
        (0..self.dim)
            .map(|d| {
                let v = &table[d];
                let mut x = 0u32;
                let mut n = index;
                let mut k = 0;
                while n != 0 {
                    if n & 1 == 1 {
                        x ^= v[k];
                    }
                    n >>= 1;
                    k += 1;
                }
                if let Some(seed) = self.seed {
                    x = owen_scramble(x, seed, d);
                }
                x as f64 * SCALE
            })
            .collect()
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let p = self.point_at(self.cursor);
        self.cursor += 1;
        p
    }

    pub fn take_points(&mut self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.next_point()).collect()
    }
}

/// The first `n` points (from index 1) of a `dim`-dimensional sequence.
pub fn sobol_points(n: usize, dim: usize, seed: Option<u64>) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::InvalidInput("point count must be at least 1".into()));
    }
    Ok(SobolStream::new(dim, seed)?.take_points(n))
}
