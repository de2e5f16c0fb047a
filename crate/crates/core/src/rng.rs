//! Keyed random streams.
//!
//! Every consumer of randomness asks for a stream by `(master seed, purpose,
//! index)`. The triple is packed directly into a ChaCha key, so distinct
//! triples give independent counter-based streams, and no stream's position
//! depends on how much another stream has been consumed. This is what lets the
//! Real and Ideal worlds share initialization and evaluation data while their
//! training data stays independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator handed to every sampling routine.
pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. The discriminant is part of the key, so the
/// values must never be renumbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    TrainSet = 2,
    EvalSet = 3,
    TrainProbe = 4,
    RealData = 5,
    IdealData = 6,
    Teacher = 7,
    Generator = 8,
    GradCheck = 9,
    ToyTrainSet = 10,
    ToyEval = 11,
    Pool = 12,
}

/// Derive the stream for `(master, purpose, index)`.
pub fn stream(master: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    // constant tag in the last word keeps these keys apart from seed_from_u64 keys
    key[24..].copy_from_slice(b"dboot-v1");
    ChaCha8Rng::from_seed(key)
}

/// Derive a child seed, for APIs that take a plain integer seed.
pub fn derive_seed(master: u64, purpose: Purpose, index: u64) -> u64 {
    use rand::RngCore;
    stream(master, purpose, index).next_u64()
}
