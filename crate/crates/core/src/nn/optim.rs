use serde::{Deserialize, Serialize};

use super::MiniCnn;
use crate::error::{Error, Result};

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 4e-5,
            epochs: 20,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::invalid(format!(
                "lr0 must be positive, got {}",
                self.lr0
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid(format!(
                "weight decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be at least 1"));
        }
        Ok(())
    }
}

/// One SGD-with-momentum update on a flat parameter buffer:
/// `v ← μ·v + g + λ·θ`, then `θ ← θ − η·v`.
pub fn sgd_momentum_step(
    params: &mut [f32],
    grads: &[f32],
    velocity: &mut [f32],
    lr: f32,
    momentum: f32,
    weight_decay: f32,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::shape(format!(
            "sgd: {} params, {} grads, {} velocity entries",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum SGD over every parameter of a [`MiniCnn`].
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: MiniCnn,
}

impl Sgd {
    pub fn new(model: &MiniCnn, momentum: f32, weight_decay: f32) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: model.zeros_like(),
        }
    }

    pub fn step(&mut self, model: &mut MiniCnn, grads: &MiniCnn, lr: f32) -> Result<()> {
        let grads = grads.params();
        let params = model.params_mut();
        let velocity = self.velocity.params_mut();
        if grads.len() != params.len() {
            return Err(Error::shape("gradient container does not match model"));
        }
        for ((p, g), v) in params.into_iter().zip(&grads).zip(velocity) {
            sgd_momentum_step(
                p.values,
                g.values,
                v.values,
                lr,
                self.momentum,
                self.weight_decay,
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;

    #[test]
    fn fixed_point_without_gradient() {
        let mut p = [1.5, -2.0];
        let mut v = [0.0, 0.0];
        sgd_momentum_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p, [1.5, -2.0]);
    }

    #[test]
    fn one_step_by_hand() {
        let mut p = [1.0];
        let mut v = [0.0];
        sgd_momentum_step(&mut p, &[1.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert_eq!(v[0], 1.0);
        sgd_momentum_step(&mut p, &[1.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert!((v[0] - 1.9).abs() < 1e-6);
        assert!((p[0] - 0.71).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_shrinks_norm_monotonically() {
        let mut p = vec![3.0f32, -1.0, 0.5, 2.0];
        let mut v = vec![0.0; 4];
        let zero = vec![0.0; 4];
        let mut prev = p.iter().map(|x| x * x).sum::<f32>();
        for _ in 0..200 {
            sgd_momentum_step(&mut p, &zero, &mut v, 0.01, 0.9, 0.1).unwrap();
            let norm = p.iter().map(|x| x * x).sum::<f32>();
            assert!(norm < prev, "{norm} !< {prev}");
            prev = norm;
        }
    }

    #[test]
    fn rejects_mismatched_buffers() {
        let mut p = [0.0; 2];
        let mut v = [0.0; 3];
        assert!(sgd_momentum_step(&mut p, &[0.0; 2], &mut v, 0.1, 0.9, 0.0).is_err());
    }

    #[test]
    fn model_step_moves_against_gradient() {
        let mut m = MiniCnn::new(Architecture::mini(3, 2), 0).unwrap();
        let before = m.clone();
        let mut g = m.zeros_like();
        g.classifier.bias[0] = 1.0;
        let mut opt = Sgd::new(&m, 0.9, 0.0);
        opt.step(&mut m, &g, 0.5).unwrap();
        assert_eq!(m.classifier.bias[0], before.classifier.bias[0] - 0.5);
        assert_eq!(m.blocks, before.blocks);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            momentum: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lr0: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
