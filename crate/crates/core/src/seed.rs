//! Seed derivation.
//!
//! A master seed fans out into stage seeds by stable string labels, and stage
//! seeds fan out into per-item seeds by ordinal. Derived seeds depend only on
//! their path, never on how many siblings were drawn before them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub const STAGE_CANDIDATES: &str = "candidates";
pub const STAGE_ROUTING: &str = "routing";
pub const STAGE_ORACLE: &str = "oracle";
pub const STAGE_SUBSAMPLE: &str = "subsample";
pub const STAGE_GAIN: &str = "gain";
pub const STAGE_SYNTH: &str = "synth";
pub const STAGE_BASELINE: &str = "baseline";

fn digest_u64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let out = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&out[..8]);
    u64::from_le_bytes(b)
}

/// Seed for a named stage.
pub fn derive(seed: u64, label: &str) -> u64 {
    digest_u64(&[&seed.to_le_bytes(), label.as_bytes()])
}

/// Seed for the `ordinal`-th item drawn within a stage.
pub fn child(seed: u64, ordinal: u64) -> u64 {
    digest_u64(&[&seed.to_le_bytes(), b"#", &ordinal.to_le_bytes()])
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
