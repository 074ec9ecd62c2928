//! Seeded random streams.
//!
//! Every consumer of randomness (data order, attack starts, mask init, each
//! layer's weight noise) owns its own ChaCha8 stream keyed by `(seed, stream id)`,
//! so draws in one place never shift the sequence seen by another.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const DATA_ORDER: u64 = 1;
pub const ATTACK_START: u64 = 2;
pub const MASK_INIT: u64 = 3;
pub const PARAM_INIT: u64 = 4;
const TRAIN_NOISE_BASE: u64 = 1 << 32;
const EVAL_NOISE_BASE: u64 = 2 << 32;

/// Stream id for layer `layer`'s training-time noise.
pub fn train_noise(layer: usize) -> u64 {
    TRAIN_NOISE_BASE + layer as u64
}

/// Stream id for layer `layer`'s evaluation-time noise.
pub fn eval_noise(layer: usize) -> u64 {
    EVAL_NOISE_BASE + layer as u64
}

/// Serializable position of a [`Stream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Debug, Clone)]
pub struct Stream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, rng }
    }

    pub fn state(&self) -> StreamState {
        StreamState { seed: self.seed, stream: self.rng.get_stream(), word_pos: self.rng.get_word_pos() }
    }

    pub fn restore(state: StreamState) -> Self {
        let mut s = Self::new(state.seed, state.stream);
        s.rng.set_word_pos(state.word_pos);
        s
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            return lo;
        }
        self.rng.gen_range(lo..hi)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn shuffle<V>(&mut self, items: &mut [V]) {
        rand::seq::SliceRandom::shuffle(items, &mut self.rng);
    }
}

impl PartialEq for Stream {
    fn eq(&self, other: &Self) -> bool {
        self.state() == other.state()
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> core::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}
