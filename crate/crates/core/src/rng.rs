//! Keyed, counter-based random streams.
//!
//! A stream is identified by `(seed, purpose, step, index, sub)`. The first
//! four words form the 256-bit ChaCha key and `sub` selects the ChaCha stream
//! (nonce), so any draw can be regenerated without replaying earlier ones and
//! two different keys never share output. Training code keys its draws by
//! step, sample index and smoothing index, which makes results independent of
//! the order in which samples are processed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Master seed of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Seed of the `i`-th run derived from this master seed.
    pub fn offset(self, i: u64) -> RngSeed {
        RngSeed(self.0.wrapping_add(i))
    }

    pub fn stream(self, purpose: Purpose, step: u64, index: u64, sub: u64) -> Stream {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.0.to_le_bytes());
        key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
        key[16..24].copy_from_slice(&step.to_le_bytes());
        key[24..32].copy_from_slice(&index.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(sub);
        Stream { rng }
    }
}

impl From<u64> for RngSeed {
    fn from(v: u64) -> Self {
        RngSeed(v)
    }
}

/// What a stream is used for. The discriminants are part of the key and must
/// stay stable for results to remain reproducible.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Poisson = 2,
    Smoothing = 3,
    GradientNoise = 4,
    ToyInit = 5,
    MonteCarlo = 6,
    SharpnessRestart = 7,
    SliceDirection = 8,
    SmoothnessPairs = 9,
    Aggregator = 10,
    Shuffle = 11,
    Dataset = 12,
    LabelFlip = 13,
    Test = 99,
}

/// A single random stream.
#[derive(Clone, Debug)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    /// Standard normal draw.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Fills `out` with `scale * N(0, 1)` draws.
    pub fn fill_normal(&mut self, scale: f64, out: &mut [f64]) {
        for x in out {
            *x = scale * self.normal();
        }
    }

    /// Adds `scale * N(0, 1)` draws to `out`.
    pub fn add_normal(&mut self, scale: f64, out: &mut [f64]) {
        for x in out {
            *x += scale * self.normal();
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
