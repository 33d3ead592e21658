//! Named random streams derived from a single run seed.
//!
//! A stream is keyed by the seed and a path of names, so every unit of work
//! draws from its own generator no matter which thread runs it or in which
//! order units are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

/// Generator for `(seed, key…)`. Keys are length-prefixed before hashing so
/// `["ab", "c"]` and `["a", "bc"]` give different streams.
pub fn stream(seed: u64, keys: &[&str]) -> Stream {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for key in keys {
        h.update((key.len() as u64).to_le_bytes());
        h.update(key.as_bytes());
    }
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Hex SHA-256 of arbitrary bytes, used for configuration fingerprints.
pub fn fingerprint(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
