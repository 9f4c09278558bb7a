//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`Stream`], a ChaCha8 keystream
//! whose 256-bit key is derived from a 64-bit [`RngSeed`]. Streams for
//! independent units of work (a trial, a fold, an epoch) are obtained with
//! [`RngSeed::derive`], so results never depend on scheduling order.
//!
//! Derivation rule, reproducible in any language:
//!
//! ```text
//! mix(z):  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!          z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!          z ^ (z >> 31)                         (wrapping u64 arithmetic)
//! derive(seed, [c0, c1, ...]):
//!          s = seed; for c in path: s = mix(s ^ mix(c + 0x9E3779B97F4A7C15))
//! key(s):  w_i = mix(s + (i + 1) * 0x9E3779B97F4A7C15) for i in 0..4,
//!          written little-endian into 32 bytes; ChaCha8, stream 0, counter 0.
//! ```
//!
//! Draws: `uniform = (next_u64 >> 11) * 2^-53`; `below(n) = (next_u64 * n) >> 64`
//! in 128-bit arithmetic; `normal` is one Box-Muller variate per two uniforms,
//! `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Master seed for a generator or experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Child seed for the unit of work addressed by `path`.
    pub fn derive(self, path: &[u64]) -> RngSeed {
        let s = path.iter().fold(self.0, |s, &c| mix(s ^ mix(c.wrapping_add(GOLDEN))));
        RngSeed(s)
    }

    pub fn stream(self) -> Stream {
        let mut key = [0u8; 32];
        for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
            let w = mix(self.0.wrapping_add((i as u64 + 1).wrapping_mul(GOLDEN)));
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        Stream(ChaCha8Rng::from_seed(key))
    }
}

impl From<u64> for RngSeed {
    fn from(v: u64) -> Self {
        RngSeed(v)
    }
}

/// A deterministic source of draws.
pub struct Stream(ChaCha8Rng);

impl Stream {
    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform on [0, 1) with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// +1 or -1 with equal probability.
    pub fn sign(&mut self) -> f64 {
        if self.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Fisher-Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Uniform random `k`-subset of `0..n`, sorted ascending.
    pub fn subset(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        let mut picked = pool[..k].to_vec();
        picked.sort_unstable();
        picked
    }
}
