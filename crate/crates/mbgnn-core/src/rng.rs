//! Deterministic seeded randomness.
//!
//! The generator is xoshiro256++ seeded through SplitMix64, both fixed,
//! published algorithms, so the stream for a given seed is reproducible in
//! any language. Distinct experiment phases draw from distinct substreams
//! derived with [`SeededRng::substream`] so that, say, adding one more weight
//! init draw never shifts the data shuffle.

use alloc::format;
use alloc::vec::Vec;

use crate::math;
use crate::matrix::{CoreError, DenseMatrix, Result};

/// Stream labels for the experiment phases. Purely conventional; any `u64`
/// works as a label.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const ATTACK: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const CORRUPT: u64 = 6;
    pub const GAN: u64 = 7;
    pub const NDB: u64 = 8;
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// xoshiro256++ with SplitMix64 seeding.
#[derive(Clone, Debug)]
pub struct SeededRng {
    state: [u64; 4],
    spare_gaussian: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let state = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        SeededRng {
            state,
            spare_gaussian: None,
        }
    }

    /// Derive an independent generator for `(seed, path)`.
    ///
    /// Each path element is folded into the seed via SplitMix64, so
    /// `substream(s, &[a, b])` differs from `substream(s, &[b, a])` and from
    /// any single-label stream.
    pub fn substream(seed: u64, path: &[u64]) -> Self {
        let mut s = seed;
        for &label in path {
            let mut lm = label;
            let mixed = splitmix64(&mut lm);
            let mut sm = s ^ mixed;
            s = splitmix64(&mut sm);
        }
        SeededRng::new(s)
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` via rejection sampling (no modulo bias).
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal via Box-Muller; the second draw of each pair is cached.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(g) = self.spare_gaussian.take() {
            return g;
        }
        // u1 in (0, 1] so ln is finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = math::sqrt(-2.0 * math::ln(u1));
        let theta = 2.0 * math::PI * u2;
        self.spare_gaussian = Some(r * math::sin(theta));
        r * math::cos(theta)
    }

    /// Matrix of i.i.d. `N(0, sigma^2)` entries, filled row-major.
    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize, sigma: f64) -> Result<DenseMatrix> {
        if sigma < 0.0 {
            return Err(CoreError::Parameter(format!("negative sigma {sigma}")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(sigma * self.next_gaussian());
        }
        DenseMatrix::from_vec(rows, cols, data)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices drawn from `[0, n)`, in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "sample_indices k > n");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.next_below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
