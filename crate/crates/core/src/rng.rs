//! Counter-based random streams.
//!
//! Every random quantity in the lab is addressed by `(seed, stream, index)`.
//! A [`Stream`] derives a ChaCha8 key from `(seed, stream)`; the draw index
//! selects the ChaCha stream number, so each index owns an independent
//! 2^64-block keystream. Draws are therefore pure functions of their
//! address and can be evaluated in any order, on any thread.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Logical stream identifiers. Keeping them in one place guarantees the
/// trajectory stream never overlaps a diagnostic stream.
pub mod streams {
    /// Samples consumed by the SGD recursion, `z_0, z_1, ...`.
    pub const TRAJECTORY: u64 = 0;
    /// Monte Carlo expected-risk evaluation.
    pub const RISK: u64 = 1;
    /// Large samples used to locate `f_K` numerically.
    pub const REFERENCE: u64 = 2;

    const STABILITY: u64 = 0x10;
    const CONVERSE: u64 = 0x11;
    const GROWTH: u64 = 0x12;
    const GRADIENT_MEAN: u64 = 0x13;
    const CONSTANTS: u64 = 0x14;
    const DESCENT: u64 = 0x15;

    fn tagged(tag: u64, k: u64) -> u64 {
        (tag << 48) | (k & ((1 << 48) - 1))
    }

    /// Fresh draws for the CV_on gap at checkpoint `k`.
    pub fn stability(k: u64) -> u64 {
        tagged(STABILITY, k)
    }

    pub fn converse(k: u64) -> u64 {
        tagged(CONVERSE, k)
    }

    pub fn growth(k: u64) -> u64 {
        tagged(GROWTH, k)
    }

    pub fn gradient_mean(k: u64) -> u64 {
        tagged(GRADIENT_MEAN, k)
    }

    /// Probing of loss constants.
    pub fn constants(k: u64) -> u64 {
        tagged(CONSTANTS, k)
    }

    /// Probe directions for the descent-direction check.
    pub fn descent(k: u64) -> u64 {
        tagged(DESCENT, k)
    }
}

#[derive(Debug, Clone)]
pub struct Stream {
    key: [u8; 32],
}

impl Stream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut kdf = ChaCha8Rng::seed_from_u64(seed);
        kdf.set_stream(stream);
        let mut key = [0u8; 32];
        kdf.fill(&mut key);
        Self { key }
    }

    /// Generator positioned at the start of draw `index`.
    pub fn at(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index);
        rng
    }

    pub fn uniform(&self, index: u64) -> f64 {
        self.at(index).random::<f64>()
    }
}

pub(crate) fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub(crate) fn normal_vec<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| normal(rng)).collect()
}
