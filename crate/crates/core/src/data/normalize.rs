use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel `(v − mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    /// Channel statistics of a (training) split, accumulated in f64.
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let x = data.images();
        let s = x.shape();
        let mut mean = Vec::with_capacity(s.c);
        let mut std = Vec::with_capacity(s.c);
        let count = (s.n * s.plane()) as f64;
        for c in 0..s.c {
            let planes = || (0..s.n).flat_map(move |n| x.plane(n, c).iter().map(|&v| v as f64));
            let m = planes().sum::<f64>() / count;
            let var = planes().map(|v| (v - m) * (v - m)).sum::<f64>() / count;
            if var <= 0.0 {
                return Err(Error::invalid(format!(
                    "channel {c} has zero standard deviation"
                )));
            }
            mean.push(m as f32);
            std.push(var.sqrt() as f32);
        }
        Ok(Normalization { mean, std })
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::shape(format!(
                "normalization has {}/{} entries for {channels} channels",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("standard deviation must be positive"));
        }
        Ok(())
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.validate(x.shape().c)?;
        let mut out = x.clone();
        self.apply_in_place(&mut out);
        Ok(out)
    }

    pub(crate) fn apply_in_place(&self, x: &mut Tensor) {
        let s = x.shape();
        for n in 0..s.n {
            for c in 0..s.c {
                let (m, sd) = (self.mean[c], self.std[c]);
                x.plane_mut(n, c)
                    .iter_mut()
                    .for_each(|v| *v = (*v - m) / sd);
            }
        }
    }

    pub fn invert(&self, x: &Tensor) -> Result<Tensor> {
        self.validate(x.shape().c)?;
        let s = x.shape();
        let mut out = x.clone();
        for n in 0..s.n {
            for c in 0..s.c {
                let (m, sd) = (self.mean[c], self.std[c]);
                out.plane_mut(n, c)
                    .iter_mut()
                    .for_each(|v| *v = *v * sd + m);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(Shape::new(6, 3, 4, 4), |_, _, _, _| rng.random::<f32>());
        Dataset::new(x, vec![0; 6], 1).unwrap()
    }

    #[test]
    fn centres_and_scales() {
        let d = random_dataset(0);
        let norm = Normalization::from_dataset(&d).unwrap();
        let y = norm.apply(d.images()).unwrap();
        let s = y.shape();
        for c in 0..3 {
            let vals: Vec<f64> = (0..s.n)
                .flat_map(|n| y.plane(n, c).iter().map(|&v| v as f64))
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5, "{m}");
            assert!((var - 1.0).abs() < 1e-4, "{var}");
        }
    }

    #[test]
    fn constant_mean_input_maps_to_zero() {
        let norm = Normalization {
            mean: vec![0.25, 0.5],
            std: vec![0.5, 2.0],
        };
        let x = Tensor::from_fn(Shape::new(1, 2, 3, 3), |_, c, _, _| norm.mean[c]);
        assert!(norm.apply(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn recomputation_is_identical() {
        let d = random_dataset(1);
        assert_eq!(
            Normalization::from_dataset(&d).unwrap(),
            Normalization::from_dataset(&d).unwrap()
        );
    }

    #[test]
    fn inverse_recovers_input() {
        let d = random_dataset(2);
        let norm = Normalization::from_dataset(&d).unwrap();
        let back = norm.invert(&norm.apply(d.images()).unwrap()).unwrap();
        for (a, b) in back.data().iter().zip(d.images().data()) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_std_is_rejected() {
        let d = Dataset::new(Tensor::full(Shape::new(3, 1, 2, 2), 0.5), vec![0; 3], 1).unwrap();
        assert!(Normalization::from_dataset(&d).is_err());
        let bad = Normalization {
            mean: vec![0.0],
            std: vec![0.0],
        };
        assert!(bad.apply(&Tensor::zeros(Shape::new(1, 1, 1, 1))).is_err());
    }
}
