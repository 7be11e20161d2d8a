//! Small shared helpers: content hashing, seed derivation, input reading.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Read a user-supplied input file; failures are validation errors (the
/// CLI maps them to exit code 1), unlike write failures mid-run.
pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// SplitMix64 step; used to derive independent per-epoch / per-purpose seeds
/// from one global seed without correlated streams.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for (seed, purpose, index) triples.
pub fn derive_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ purpose.wrapping_mul(0xa076_1d64_78bd_642f)) ^ index)
}
