//! Deterministic RNG derivation.
//!
//! Every stochastic routine in this crate derives an independent ChaCha8
//! stream from a user seed plus fixed integer keys (household, wave,
//! replicate, ...). Streams are therefore order-independent: parallel or
//! reordered execution cannot change what any unit of work draws. Floats
//! are built from the integer stream explicitly so output bytes do not
//! depend on platform float libraries.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Derive an independent stream for (seed, k1, k2, k3). Distinct key tuples
/// give distinct ChaCha keys, hence statistically independent streams.
pub fn stream(seed: u64, k1: u64, k2: u64, k3: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&k1.to_le_bytes());
    key[16..24].copy_from_slice(&k2.to_le_bytes());
    key[24..].copy_from_slice(&k3.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Uniform in [0, 1) from the top 53 bits of one u64 draw.
pub fn unit(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in [0, n) by rejection, bias-free.
pub fn below(rng: &mut impl RngCore, n: usize) -> usize {
    debug_assert!(n > 0);
    let n = n as u64;
    let zone = u64::MAX - u64::MAX % n;
    loop {
        let v = rng.next_u64();
        if v < zone {
            return (v % n) as usize;
        }
    }
}

/// Sample an index from a cumulative-mass walk over `weights` (need not be
/// normalized). Ties and zero tails resolve to the last positive entry.
pub fn categorical(rng: &mut impl RngCore, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0);
    let mut u = unit(rng) * total;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            if u < w {
                return i;
            }
            u -= w;
        }
    }
    last_positive
}
