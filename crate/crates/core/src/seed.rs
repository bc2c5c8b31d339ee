//! Deterministic seed derivation.
//!
//! Every stochastic component receives `derive(root, label)`: the first eight
//! bytes (little endian) of `SHA-256(root.to_le_bytes() || label)`. Labels are
//! fixed strings such as `"corpus"` or `"train/init"`, so a partial pipeline
//! reproduces exactly the sub-seeds a full run would use.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(root: u64, label: &str) -> ChaCha8Rng {
    rng(derive(root, label))
}
