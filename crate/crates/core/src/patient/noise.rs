//! Per-subject sensor noise streams.
//!
//! Streams are keyed by `(seed, subject)` through ChaCha's stream id, so the
//! draws a subject sees do not depend on which worker runs it or when.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub trait NoiseStream {
    /// Next standard-normal draw.
    fn next_normal(&mut self) -> f64;
}

/// Always returns zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseStream for ZeroNoise {
    fn next_normal(&mut self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct SubjectNoise {
    rng: ChaCha8Rng,
}

impl SubjectNoise {
    pub fn new(seed: u64, subject: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(subject);
        SubjectNoise { rng }
    }
}

impl NoiseStream for SubjectNoise {
    fn next_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}
