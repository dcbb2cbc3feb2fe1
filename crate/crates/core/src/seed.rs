// SPDX-License-Identifier: Apache-2.0

//! Seed derivation. Every stage seed is `SHA-256(seed_le ‖ label)[..8]` read
//! little-endian, so one top-level seed fixes all randomness in a run.

use sha2::{Digest, Sha256};

pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

/// Per-item seed below a stage seed, e.g. one per frame.
pub fn derive_indexed(seed: u64, label: &str, index: u64) -> u64 {
    derive_seed(seed, &format!("{label}/{index}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_labels_give_distinct_seeds() {
        assert_eq!(derive_seed(1, "ego-motion"), derive_seed(1, "ego-motion"));
        assert_ne!(derive_seed(1, "ego-motion"), derive_seed(1, "segment"));
        assert_ne!(derive_seed(1, "segment"), derive_seed(2, "segment"));
        assert_ne!(derive_indexed(1, "frame", 0), derive_indexed(1, "frame", 1));
    }
}
