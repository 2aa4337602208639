//! Synthetic data for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svdd::Observation;

/// `n` points drawn uniformly from an annulus with radii 0.5 and 1 around the
/// origin, padded with uniform noise up to dimension `p` (at least 2).
pub fn annulus(n: usize, p: usize, seed: u64) -> Vec<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let r: f64 = rng.random_range(0.5..1.0);
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let mut x = vec![r * t.cos(), r * t.sin()];
            x.extend((2..p).map(|_| rng.random_range(-0.1..0.1)));
            x
        })
        .collect()
}
