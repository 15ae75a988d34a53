use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::{Shape, Tensor};

/// A separable toy set: each class is a bright Gaussian blob at its own
/// position on a ring around the image centre, with positional jitter and
/// pixel noise. Sample `i` has label `i mod num_classes`.
pub fn synthetic_blobs(
    n: usize,
    num_classes: usize,
    channels: usize,
    size: usize,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || channels == 0 || size < 4 {
        return Err(Error::invalid(
            "synthetic data needs classes, channels and size ≥ 4",
        ));
    }
    let noise = Normal::new(0.0f32, 0.05).expect("valid normal");
    let centre = size as f32 / 2.0;
    let radius = size as f32 / 4.0;
    let sigma = size as f32 / 8.0;
    let mut x = Tensor::zeros(Shape::new(n, channels, size, size));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng::stream(seed, Stream::Synthetic, &[i as u64]);
        let k = i % num_classes;
        let angle = std::f32::consts::TAU * k as f32 / num_classes as f32;
        let cy = centre + radius * angle.sin() + r.random_range(-1.0..1.0);
        let cx = centre + radius * angle.cos() + r.random_range(-1.0..1.0);
        let item = x.item_mut(i);
        for c in 0..channels {
            let gain = 0.6 + 0.4 * ((k + c) % 2) as f32;
            for y in 0..size {
                for xx in 0..size {
                    let d2 = (y as f32 - cy).powi(2) + (xx as f32 - cx).powi(2);
                    let v = 0.1 + gain * (-d2 / (2.0 * sigma * sigma)).exp() + noise.sample(&mut r);
                    item[(c * size + y) * size + xx] = v.clamp(0.0, 1.0);
                }
            }
        }
        labels.push(k);
    }
    Dataset::new(x, labels, num_classes)
}
