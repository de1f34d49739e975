//! Deterministic stream derivation: every random draw in the pipeline
//! comes from a ChaCha stream keyed by the user seed plus fixed tags
//! (epoch, step, sample slot, ...), so resumed and parallel runs replay
//! identical sequences regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One splitmix64 scramble step.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a tag sequence into an independent stream key.
pub fn stream_key(seed: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix(seed);
    for &t in tags {
        h = splitmix(h ^ t.wrapping_mul(0xD6E8FEB86659FD93));
    }
    h
}

pub fn derive_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, tags))
}

/// Stream tags for the pipeline's rng consumers.
pub mod tag {
    pub const SYNTH_VIDEO: u64 = 1;
    pub const MODEL_INIT: u64 = 2;
    pub const EPOCH_SHUFFLE: u64 = 3;
    pub const SAMPLE_AUG: u64 = 4;
    pub const DROPOUT: u64 = 5;
}
