//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapelinker::{PointCloud, Vec3};

/// `n` points uniform in a 10 Å cube.
pub fn random_cloud(seed: u64, n: usize) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| Vec3([rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]))
        .collect();
    PointCloud { points, label: None }
}

/// The first `n` entries of the bundled linker corpus.
pub fn corpus(n: usize) -> Vec<String> {
    shapelinker::data::linker_corpus().into_iter().take(n).collect()
}
