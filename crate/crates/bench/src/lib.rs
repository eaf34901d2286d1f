//! Seeded inputs shared by the benchmarks.

use erank_core::RepresentationSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// An `n x d` representation set with entries uniform in `[-1, 1)`.
pub fn random_reps(n: usize, d: usize, seed: u64) -> RepresentationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    RepresentationSet::new(n, d, data).expect("finite random data")
}
