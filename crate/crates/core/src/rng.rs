//! Seeded random streams.
//!
//! Every source of randomness in a run hangs off a single root seed. Each
//! consumer (data generation, episode sampling, dropout, schedule draws, ...)
//! gets its own ChaCha stream so that changing how much one consumer draws
//! never perturbs another.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Named streams split off a root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Episodes = 2,
    Dropout = 3,
    Schedule = 4,
    Init = 5,
    Eval = 6,
    Auxiliary = 7,
}

/// A reproducible generator whose full position can be saved and restored.
#[derive(Debug, Clone, PartialEq)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

/// Serializable position of a [`SeededRng`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn stream(root: u64, stream: Stream) -> Self {
        Self::with_stream(root, stream as u64)
    }

    pub fn with_stream(root: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(root);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Independent child generator, e.g. one per evaluation episode.
    pub fn child(&self, index: u64) -> Self {
        let mut inner = ChaCha8Rng::from_seed(self.inner.get_seed());
        inner.set_stream(self.inner.get_stream() ^ index.rotate_left(32) ^ 0x9e37_79b9_7f4a_7c15);
        Self { inner }
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.inner.get_seed(),
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut inner = ChaCha8Rng::from_seed(state.seed);
        inner.set_stream(state.stream);
        inner.set_word_pos(state.word_pos);
        Self { inner }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
