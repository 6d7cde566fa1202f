//! Seed derivation.
//!
//! Every stochastic call draws from a stream keyed by
//! `(master seed, module tag, entity id, round)`, so adding draws in one
//! module never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest as _, Sha256};

pub type SimRng = ChaCha8Rng;

/// Derives an independent RNG stream.
pub fn stream(master_seed: u64, tag: &str, entity: u64, round: u64) -> SimRng {
    let mut h = Sha256::new();
    h.update(b"socialfl/rng/v1");
    h.update(master_seed.to_le_bytes());
    h.update((tag.len() as u32).to_le_bytes());
    h.update(tag.as_bytes());
    h.update(entity.to_le_bytes());
    h.update(round.to_le_bytes());
    let seed: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(seed)
}

/// Derives a child seed, for handing a whole sub-experiment its own master seed.
pub fn child_seed(master_seed: u64, tag: &str, entity: u64) -> u64 {
    use rand::RngCore;
    stream(master_seed, tag, entity, 0).next_u64()
}
