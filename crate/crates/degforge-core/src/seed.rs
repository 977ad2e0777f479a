//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline draws from a seed produced by
//! [`seed_for`], so a run is a pure function of its master seed. The
//! derivation is hash-based and byte-order-fixed so any language can
//! reproduce it:
//!
//! ```text
//! seed_for(master, stage, index) =
//!     LE64( SHA-256( LE64(master) || 0x1F || UTF8(stage) || 0x1F || LE64(index) )[0..8] )
//! ```

use sha2::{Digest, Sha256};

/// Derives the seed for one item of one pipeline stage.
pub fn seed_for(master: u64, stage: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(stage.as_bytes());
    hasher.update([0x1f]);
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
