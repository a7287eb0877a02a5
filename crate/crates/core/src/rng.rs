// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded random streams.
//!
//! Every stream is ChaCha20 keyed by `seed_from_u64(seed ^ index)` on a
//! fixed stream id per purpose. Normals come from Box-Muller over 53-bit
//! uniforms, so the sequence depends only on the ChaCha keystream and not on
//! any distribution crate's sampling algorithm.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream ids separating independent uses of the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Noise = 1,
    TruthBasis = 2,
    Sample = 3,
    Dominance = 4,
    MeasurementNoise = 5,
}

/// A deterministic stream of uniforms and normals.
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl Stream {
    /// Stream for item `index` of `domain` under `seed`.
    pub fn new(seed: u64, domain: Domain, index: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ index);
        rng.set_stream(domain as u64);
        Self { rng, spare: None }
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi]`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u keeps the log argument in (0, 1]
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    /// `n` independent standard normals.
    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}
