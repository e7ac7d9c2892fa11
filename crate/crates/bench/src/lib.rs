//! Synthetic inputs for the benchmarks.

use prism_core::{ChannelMatrix, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform random 8-bit RGB image.
pub fn random_image(rows: usize, cols: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut channel = || ChannelMatrix::from_fn(rows, cols, |_, _| f64::from(rng.random::<u8>())).expect("valid samples");
    let (r, g, b) = (channel(), channel(), channel());
    RgbImage::new(r, g, b).expect("equal sizes")
}

/// `per_class` rows for each of `classes` labels, each class shifted along
/// its own coordinate.
pub fn labeled_rows(classes: usize, per_class: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(classes * per_class);
    let mut ys = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        for _ in 0..per_class {
            xs.push((0..dim).map(|j| rng.random_range(-1.0..1.0) + if j == c { 3.0 } else { 0.0 }).collect());
            ys.push(format!("c{c}"));
        }
    }
    (xs, ys)
}
