//! Seed derivation. Every random draw in the pipeline comes from a ChaCha
//! stream keyed by a root seed and a path of names/indices, so components
//! can be regenerated independently of one another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derives a child seed from `seed` and a label.
pub fn substream(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Derives a child seed from `seed`, a label and an index.
pub fn indexed(seed: u64, label: &str, index: u64) -> u64 {
    substream(substream(seed, label), &index.to_string())
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
