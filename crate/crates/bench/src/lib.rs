//! Input builders shared by the benchmarks under benches/.

use augsubset::{Dataset, Label, LabeledExample, RawImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two classes separated along the first axis with uniform noise elsewhere.
pub fn two_class(n: usize, d: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let examples = (0..n)
        .map(|i| {
            let y = if i % 2 == 0 { 1.0 } else { -1.0 };
            let mut x: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
            x[0] += 0.5 * y;
            LabeledExample::new(x, Label::from_sign(y), i)
        })
        .collect();
    Dataset::from_examples(examples).expect("consistent rows")
}

/// A noisy 28x28 grayscale image.
pub fn image(seed: u64) -> RawImage {
    let mut r = rng(seed);
    RawImage::new(28, 28, 1, (0..28 * 28).map(|_| r.random()).collect()).expect("valid size")
}
