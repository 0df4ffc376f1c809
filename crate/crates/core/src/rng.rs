//! Deterministic random streams and small sampling helpers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as StreamRng;

/// Stream tags; one per consumer so that runs are reproducible per
/// `(seed, module, index)` no matter how work is scheduled.
pub mod streams {
    pub const CRITIC: u32 = 1;
    pub const ACTOR: u32 = 2;
    pub const VALUE_ESTIMATE: u32 = 3;
    pub const ORACLE_MC: u32 = 4;
    pub const STABILITY: u32 = 5;
    pub const SAMPLER_CHECK: u32 = 6;
    pub const GENERATOR: u32 = 7;
}

/// RNG for the `index`-th work item of `module` under the run seed `seed`.
pub fn stream_rng(seed: u64, module: u32, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((module as u64) << 48) ^ index);
    rng
}

/// Draws an index from a probability vector by inversion.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last index with positive mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
