//! Shared fixtures for the benchmarks.

use dal_core::data::{generate_synthetic, SyntheticConfig};
use dal_core::{FrameSet, Rows};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` random rows of dimension `dim`, uniform in `[-1, 1)`.
pub fn random_rows(n: usize, dim: usize, seed: u64) -> Rows<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Rows::from_flat(dim, (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Default synthetic frames with the given number of identities.
pub fn synthetic_frames(identities: usize) -> FrameSet {
    generate_synthetic(&SyntheticConfig { identities, ..Default::default() }).unwrap().dataset.frames
}
