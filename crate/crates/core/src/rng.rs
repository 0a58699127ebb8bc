//! Named, reproducible random substreams.
//!
//! Every random draw in a simulation comes from a stream keyed by
//! `(seed, name, index)`, so adding or reordering work elsewhere never shifts
//! another stream.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// ChaCha20 generator seeded with `SHA-256(seed ‖ name ‖ index)`.
pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    h.update(index.to_le_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}
