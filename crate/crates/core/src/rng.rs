//! Seeding conventions.
//!
//! Every stochastic routine in the crate takes explicit seeds and builds a
//! [`ChaCha8Rng`]. ChaCha is counter-based, so a `(master_seed, stream)` pair
//! names a reproducible random sequence and distinct streams never overlap.
//! Ensembles assign stream `i + 1` to seed index `i`; stream 0 is reserved
//! for single-run use.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for a standalone run.
pub fn single(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for ensemble member `index` under `master_seed`.
///
/// Same key for every member, distinct stream per member: replaying one
/// member never requires simulating the others.
pub fn ensemble_member(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index.wrapping_add(1).into());
    rng
}
