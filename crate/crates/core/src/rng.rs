//! Seed derivation shared by every randomized stage.
//!
//! All randomness flows from a single master seed. Independent work units
//! (refinement configurations, trees, patches) each get their own ChaCha
//! stream so results do not depend on scheduling or thread count.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// RNG for work unit `stream` under master seed `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Two-level stream: `(seed, domain)` picks a family, `index` a member.
///
/// Domains keep e.g. tree streams and patch streams from colliding when a
/// caller reuses one master seed for several stages.
pub fn derive(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mixed = seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    substream(mixed, index)
}

/// Plain `u64` seed for a sub-task, for APIs that take a seed rather than
/// an RNG.
pub fn child_seed(seed: u64, domain: u64, index: u64) -> u64 {
    derive(seed, domain, index).next_u64()
}
