// Copyright 2026 The dcrab Authors
// SPDX-License-Identifier: Apache-2.0

//! Deterministic seed derivation.
//!
//! Child seeds must stay stable across platforms and compiler releases, so
//! this uses the SplitMix64 finalizer rather than `std::hash`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a sequence of stream indices.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ p)
    })
}

/// Random generator used everywhere randomness is needed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
