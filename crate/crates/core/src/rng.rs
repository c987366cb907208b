//! Deterministic seed derivation.
//!
//! Every stage of the pipeline derives its generator from one root seed and
//! a stage label, so independent stages (and per-individual or per-start
//! streams inside a stage) never share or race on RNG state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a of a string; stable across platforms (used for provenance
/// hashes).
pub fn fnv1a64_str(s: &str) -> u64 {
    fnv1a64(s.as_bytes())
}

/// FNV-1a over a byte slice; stable across platforms.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn mix(root: u64, label: &str, index: u64) -> u64 {
    let mut bytes = Vec::with_capacity(label.len() + 16);
    bytes.extend_from_slice(&root.to_le_bytes());
    bytes.extend_from_slice(label.as_bytes());
    bytes.extend_from_slice(&index.to_le_bytes());
    fnv1a64(&bytes)
}

/// Generator for a named stage.
pub fn derive_rng(root: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(root, label, 0))
}

/// Generator for the `index`-th stream of a named stage (per individual,
/// per random start, ...).
pub fn derive_rng_indexed(root: u64, label: &str, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(root, label, index as u64 + 1))
}
