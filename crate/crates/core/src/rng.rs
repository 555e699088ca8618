//! Deterministic randomness.
//!
//! Every random choice in the crate flows from one run seed. Subsystems pull
//! their own stream by a fixed label (`"fps"`, `"init"`, `"shape"`, ...), so
//! adding a consumer never shifts the values another consumer sees.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the label bytes; stable across platforms and versions.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A seeded stream for `(seed, label)`. Identical arguments always produce an
/// identical generator.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    let lh = label_hash(label);
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&lh.to_le_bytes());
    bytes[16..24].copy_from_slice(&seed.rotate_left(32).to_le_bytes());
    bytes[24..32].copy_from_slice(&lh.rotate_left(16).to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

/// Stream for a labeled subsystem at a given step (training iteration, shape
/// index, ...). Folds the index into the label hash rather than the seed so
/// `(seed, label, index)` triples never collide with plain `(seed, label)`.
pub fn stream_at(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let lh = label_hash(label) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&lh.to_le_bytes());
    bytes[16..24].copy_from_slice(&seed.rotate_left(32).to_le_bytes());
    bytes[24..32].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}
