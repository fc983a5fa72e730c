//! Seed derivation for reproducible, order-independent parallel streams.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from a
//! 64-bit value obtained by folding a path of indices into a root seed:
//!
//! ```text
//! derive_seed(parent, index) = splitmix64(parent ^ splitmix64(index + 0x9E3779B97F4A7C15))
//! stream(seed, [a, b, c])    = ChaCha8Rng::seed_from_u64(derive(derive(derive(seed, a), b), c))
//! ```
//!
//! Paths used by the crate:
//!
//! | consumer              | path                          |
//! |-----------------------|-------------------------------|
//! | direct walk, run `r`  | `derive_seed(seed, r)` is the run seed |
//! | walker block          | `stream(run_seed, [start_node, block])`, blocks of [`WALKER_BLOCK`] walkers |
//! | spiking tile `k`      | `stream(seed, [k])`           |
//! | sweep point `v`       | `derive_seed(seed, v)`        |
//!
//! Because each unit of work owns its stream, results do not depend on the
//! number of worker threads or on scheduling order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Walkers per independent RNG stream in the direct Monte Carlo solver.
pub const WALKER_BLOCK: u64 = 1024;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index.wrapping_add(GOLDEN_GAMMA)))
}

pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let derived = path.iter().fold(seed, |acc, &i| derive_seed(acc, i));
    ChaCha8Rng::seed_from_u64(derived)
}

/// Uniform draw in `[0, 1)` with 53 bits of resolution.
#[inline]
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
