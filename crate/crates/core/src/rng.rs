//! Seeded random number generation, split per purpose.
//!
//! A run owns a single `u64` seed. Every consumer (weight init, dropout,
//! attack starts, data shuffling) pulls an independent ChaCha stream derived
//! from that seed, so adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The generator used throughout the crate.
pub type Rng = ChaCha12Rng;

/// Independent stream identifiers for one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Weight initialization.
    Init,
    /// Dropout masks during training.
    Dropout,
    /// Attack random starts and noise.
    Attack,
    /// Dataset synthesis and epoch shuffling.
    Data,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Dropout => 2,
            Stream::Attack => 3,
            Stream::Data => 4,
        }
    }
}

/// Per-run seed from which all generators are derived.
#[derive(Debug, Clone, Copy)]
pub struct RunRng {
    seed: u64,
}

impl RunRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh generator for the given purpose. Calling twice with the same
    /// stream returns identical generators.
    pub fn stream(&self, stream: Stream) -> Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(stream.id());
        rng
    }
}
