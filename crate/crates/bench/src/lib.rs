//! Shared inputs for the benchmarks.

use atk_core::data::synth_shapes;
use atk_core::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform values in [-1, 1), reproducible from `seed`.
pub fn random_tensor<T: Scalar>(dims: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(dims, |_| T::of(rng.random_range(-1.0..1.0)))
}

/// A batch of synthetic-shape images and labels.
pub fn shape_batch(n: usize) -> (Tensor<f32>, Vec<usize>) {
    let d = synth_shapes(n, 9).expect("n >= 1");
    (d.images, d.labels)
}
