//! Training-time regularizers applied at the model's hook points.
//!
//! [`RegularizerKind`] selects one of ReplaceBlock or a baseline; all of them
//! are identities in [`Mode::Eval`]: inference always runs the plain model.

mod baselines;
mod replace_block;
mod shuffle;

pub use baselines::{
    cutout_apply, drop_block_apply, drop_block_edit, drop_block_scale, dropout_apply, dropout_edit,
    spatial_dropout_apply, spatial_dropout_edit,
};
pub use replace_block::{
    background_features, replace, replace_block_apply, replace_block_with_masks,
    BackgroundFeatures, HookPoint, HookReplacement, ReplaceBlockConfig, ReplaceBlockPass, Schedule,
};
pub use shuffle::{apply_spatial_permutation, spatial_permutation, spatial_shuffle};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{MiniCnn, Trace, HOOK_BLOCKS};
use crate::rng::{self, Stream};
use crate::tensor::{elementwise_mul, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Which regularizer a run trains with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegularizerKind {
    None,
    /// Configured by the run's [`ReplaceBlockConfig`].
    ReplaceBlock,
    DropBlock {
        keep_prob: f64,
        block_size: usize,
    },
    SpatialDropout {
        keep_prob: f64,
    },
    Dropout {
        keep_prob: f64,
    },
    /// Square side length in input pixels.
    Cutout {
        size: usize,
    },
}

impl RegularizerKind {
    pub fn validate(&self) -> Result<()> {
        let check = |kp: f64| {
            if kp > 0.0 && kp <= 1.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "keep_prob must be in (0, 1], got {kp}"
                )))
            }
        };
        match *self {
            RegularizerKind::None | RegularizerKind::ReplaceBlock => Ok(()),
            RegularizerKind::DropBlock {
                keep_prob,
                block_size,
            } => {
                if block_size == 0 || block_size % 2 == 0 {
                    return Err(Error::invalid(format!(
                        "block size must be odd, got {block_size}"
                    )));
                }
                check(keep_prob)
            }
            RegularizerKind::SpatialDropout { keep_prob }
            | RegularizerKind::Dropout { keep_prob } => check(keep_prob),
            RegularizerKind::Cutout { size } => {
                if size == 0 {
                    Err(Error::invalid("cutout size must be positive"))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            RegularizerKind::None => "none".into(),
            RegularizerKind::ReplaceBlock => "replace_block".into(),
            RegularizerKind::DropBlock { keep_prob, .. } => format!("drop_block(kp={keep_prob})"),
            RegularizerKind::SpatialDropout { keep_prob } => {
                format!("spatial_dropout(kp={keep_prob})")
            }
            RegularizerKind::Dropout { keep_prob } => format!("dropout(kp={keep_prob})"),
            RegularizerKind::Cutout { size } => format!("cutout({size})"),
        }
    }
}

/// Identifies one training step for RNG stream derivation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepContext {
    pub seed: u64,
    pub step: u64,
}

impl StepContext {
    pub fn rng(&self, stream: Stream, coords: &[u64]) -> rng::Rng {
        let mut all = Vec::with_capacity(coords.len() + 1);
        all.push(self.step);
        all.extend_from_slice(coords);
        rng::stream(self.seed, stream, &all)
    }
}

/// A change made to the features at a hook point during a training forward.
#[derive(Clone, Debug, PartialEq)]
pub enum HookEdit {
    /// `f ⊙ scale`, with `scale` either full-shape or `(N, 1, H, W)`.
    Scale(Tensor),
    /// Keep `f` where `keep` is 1, take the constant `background` where it is 0.
    Replace { keep: Tensor, background: Tensor },
}

impl HookEdit {
    pub fn apply(&self, f: &Tensor) -> Result<Tensor> {
        match self {
            HookEdit::Scale(s) => elementwise_mul(f, s),
            HookEdit::Replace { keep, background } => replace(f, background, keep),
        }
    }

    /// The factor the upstream gradient is multiplied by when passing back
    /// through this edit.
    pub fn grad_scale(&self) -> &Tensor {
        match self {
            HookEdit::Scale(s) => s,
            HookEdit::Replace { keep, .. } => keep,
        }
    }
}

/// Forward through the model, offering each hook output to `edit`.
pub fn forward_with_edits(
    model: &MiniCnn,
    x: &Tensor,
    mut edit: impl FnMut(usize, Shape) -> Result<Option<HookEdit>>,
) -> Result<Trace> {
    model.check_input(x)?;
    let mut f = x.clone();
    let mut blocks = Vec::with_capacity(3);
    let mut hook_scale = vec![None; model.blocks.len()];
    for (i, scale) in hook_scale.iter_mut().enumerate() {
        let (out, cache) = model.block_forward(i, &f)?;
        blocks.push(cache);
        f = out;
        if HOOK_BLOCKS.contains(&i) {
            if let Some(e) = edit(i, f.shape())? {
                f = e.apply(&f)?;
                *scale = Some(e.grad_scale().clone());
            }
        }
    }
    let (logits, head) = model.forward_head(&f)?;
    Ok(Trace {
        blocks,
        hook_scale,
        head,
        logits,
    })
}

/// A recorded training-mode forward pass under `kind`.
pub fn training_forward(
    model: &MiniCnn,
    x: &Tensor,
    labels: &[usize],
    kind: &RegularizerKind,
    replace_block: &ReplaceBlockConfig,
    ctx: &StepContext,
) -> Result<Trace> {
    kind.validate()?;
    match *kind {
        RegularizerKind::None => model.forward_train(x),
        RegularizerKind::ReplaceBlock => {
            Ok(replace_block_apply(model, x, labels, replace_block, ctx, Mode::Train)?.trace)
        }
        RegularizerKind::Cutout { size } => {
            let s = x.shape();
            let mut cut = Tensor::zeros(s);
            for n in 0..s.n {
                let one = x.slice_items(n, n + 1)?;
                let mut rng = ctx.rng(Stream::Cutout, &[n as u64]);
                cut.item_mut(n)
                    .copy_from_slice(cutout_apply(&one, size, &mut rng)?.data());
            }
            model.forward_train(&cut)
        }
        RegularizerKind::DropBlock {
            keep_prob,
            block_size,
        } => forward_with_edits(model, x, |hook, shape| {
            let edit = drop_block_edit(shape, keep_prob, block_size, |n| {
                ctx.rng(Stream::Seeds, &[hook as u64, n as u64])
            })?;
            Ok(Some(edit))
        }),
        RegularizerKind::SpatialDropout { keep_prob } => {
            forward_with_edits(model, x, |hook, shape| {
                let mut rng = ctx.rng(Stream::Dropout, &[hook as u64]);
                Ok(Some(spatial_dropout_edit(shape, keep_prob, &mut rng)?))
            })
        }
        RegularizerKind::Dropout { keep_prob } => forward_with_edits(model, x, |hook, shape| {
            let mut rng = ctx.rng(Stream::Dropout, &[hook as u64]);
            Ok(Some(dropout_edit(shape, keep_prob, &mut rng)?))
        }),
    }
}

/// Logits of `model` on `x` under `kind`. In [`Mode::Eval`] this is exactly
/// [`MiniCnn::infer`], whatever the regularizer.
pub fn forward(
    model: &MiniCnn,
    x: &Tensor,
    labels: &[usize],
    kind: &RegularizerKind,
    replace_block: &ReplaceBlockConfig,
    ctx: &StepContext,
    mode: Mode,
) -> Result<Tensor> {
    match mode {
        Mode::Eval => model.infer(x),
        Mode::Train => Ok(training_forward(model, x, labels, kind, replace_block, ctx)?.logits),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_kinds() -> Vec<RegularizerKind> {
        vec![
            RegularizerKind::None,
            RegularizerKind::ReplaceBlock,
            RegularizerKind::DropBlock {
                keep_prob: 0.9,
                block_size: 3,
            },
            RegularizerKind::SpatialDropout { keep_prob: 0.9 },
            RegularizerKind::Dropout { keep_prob: 0.7 },
            RegularizerKind::Cutout { size: 8 },
        ]
    }

    fn batch(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(Shape::new(n, 3, 32, 32), |_, _, _, _| {
            rng.random_range(-1.0..1.0)
        });
        let labels = (0..n).map(|_| rng.random_range(0..10)).collect();
        (x, labels)
    }

    #[test]
    fn eval_mode_is_plain_inference_for_every_kind() {
        let model = MiniCnn::new(Architecture::mini(3, 10), 0).unwrap();
        let (x, labels) = batch(3, 1);
        let plain = model.infer(&x).unwrap();
        let ctx = StepContext { seed: 1, step: 0 };
        for kind in all_kinds() {
            let out = forward(
                &model,
                &x,
                &labels,
                &kind,
                &ReplaceBlockConfig::default(),
                &ctx,
                Mode::Eval,
            )
            .unwrap();
            assert_eq!(out.data(), plain.data(), "{kind:?}");
        }
    }

    #[test]
    fn training_forward_changes_logits() {
        let model = MiniCnn::new(Architecture::mini(3, 10), 0).unwrap();
        let (x, labels) = batch(4, 2);
        let plain = model.infer(&x).unwrap();
        let ctx = StepContext { seed: 5, step: 0 };
        for kind in all_kinds().into_iter().skip(2) {
            let t = training_forward(
                &model,
                &x,
                &labels,
                &kind,
                &ReplaceBlockConfig::default(),
                &ctx,
            )
            .unwrap();
            assert_ne!(t.logits.data(), plain.data(), "{kind:?}");
            assert!(t.logits.is_finite());
        }
    }

    #[test]
    fn training_forward_is_deterministic() {
        let model = MiniCnn::new(Architecture::mini(3, 10), 0).unwrap();
        let (x, labels) = batch(2, 3);
        let ctx = StepContext { seed: 9, step: 4 };
        for kind in all_kinds() {
            let rb = ReplaceBlockConfig::default();
            let a = training_forward(&model, &x, &labels, &kind, &rb, &ctx).unwrap();
            let b = training_forward(&model, &x, &labels, &kind, &rb, &ctx).unwrap();
            assert_eq!(a.logits, b.logits);
        }
    }

    #[test]
    fn kind_serialization() {
        let k = RegularizerKind::DropBlock {
            keep_prob: 0.9,
            block_size: 3,
        };
        let s = serde_json::to_string(&k).unwrap();
        assert_eq!(s, r#"{"kind":"drop_block","keep_prob":0.9,"block_size":3}"#);
        assert_eq!(serde_json::from_str::<RegularizerKind>(&s).unwrap(), k);
        assert!(RegularizerKind::Dropout { keep_prob: 0.0 }
            .validate()
            .is_err());
        assert!(RegularizerKind::DropBlock {
            keep_prob: 0.9,
            block_size: 2
        }
        .validate()
        .is_err());
    }
}
