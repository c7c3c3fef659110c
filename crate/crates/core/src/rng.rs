//! Deterministic random-number streams.
//!
//! Everything stochastic in this crate draws from [`RngState`], a ChaCha
//! counter-based generator: advancing is a pure function of the state, so a
//! run is bit-reproducible given `(seed, stream)`. Independent substreams
//! (e.g. one for gradient sampling, one for particle propagation) come from
//! [`RngState::stream`] or [`RngState::split`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A seeded, splittable random generator.
#[derive(Debug, Clone)]
pub struct RngState {
    rng: ChaCha8Rng,
    seed: u64,
}

impl RngState {
    /// Generator for `seed`, stream 0.
    pub fn from_seed(seed: u64) -> Self {
        Self::stream(seed, 0)
    }

    /// Generator for an independent substream of `seed`.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngState { rng, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random::<u64>()
    }

    /// Fill `buf` with i.i.d. standard normal draws.
    pub fn fill_normal(&mut self, buf: &mut [f64]) {
        for v in buf.iter_mut() {
            *v = self.normal();
        }
    }

    /// Derive a child generator; the parent advances, so successive splits
    /// are independent of each other and of later draws from the parent.
    pub fn split(&mut self) -> RngState {
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&self.rng.random::<u64>().to_le_bytes());
        }
        RngState {
            rng: ChaCha8Rng::from_seed(key),
            seed: self.seed,
        }
    }
}
