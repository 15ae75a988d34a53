//! ReplaceBlock: structured regions of the feature map are overwritten with
//! features of the same image after its discriminative object was masked out.
//!
//! One training step runs:
//!
//! 1. the normal backbone forward on `x`;
//! 2. a CAM for each image's label from the deepest features;
//! 3. a target-class drop mask (TC-DM) at `threshold_ratio · max`, upsampled
//!    to image size and multiplied into `x`;
//! 4. a second, gradient-free backbone forward on the masked image, spatially
//!    shuffled per image;
//! 5. a block mask per hook point, seeded with attention-weighted (RR-SM) or
//!    uniform probabilities;
//! 6. replacement `F·B + F_bg·(1 − B)` at each hook point;
//! 7. the head on the replaced deepest features.

use serde::{Deserialize, Serialize};

use super::{forward_with_edits, HookEdit, Mode, StepContext};
use crate::cam::{
    compute_cam, stack_masks, tcdm_to_image_mask, threshold_to_tcdm, AttentionMap, BinaryMask,
};
use crate::error::{Error, Result};
use crate::mask::{sample_block_mask, MaskGenConfig, SamplingMode};
use crate::nn::{MiniCnn, Trace};
use crate::rng::{self, Stream};
use crate::tensor::{elementwise_mul, Tensor};

use super::shuffle::{apply_spatial_permutation, spatial_permutation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HookPoint {
    Block2,
    Block3,
}

impl HookPoint {
    pub fn block_index(self) -> usize {
        match self {
            HookPoint::Block2 => 1,
            HookPoint::Block3 => 2,
        }
    }

    fn from_block_index(i: usize) -> Option<Self> {
        match i {
            1 => Some(HookPoint::Block2),
            2 => Some(HookPoint::Block3),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    AllTime,
    /// Applied on even global steps only.
    Alternate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplaceBlockConfig {
    pub keep_prob: f64,
    pub block_size: usize,
    pub threshold_ratio: f32,
    pub sampling_mode: SamplingMode,
    pub schedule: Schedule,
    pub shuffle: bool,
    pub hook_points: Vec<HookPoint>,
}

impl Default for ReplaceBlockConfig {
    fn default() -> Self {
        ReplaceBlockConfig {
            keep_prob: 0.9,
            block_size: 3,
            threshold_ratio: 0.2,
            sampling_mode: SamplingMode::RrSm,
            schedule: Schedule::AllTime,
            shuffle: true,
            hook_points: vec![HookPoint::Block2, HookPoint::Block3],
        }
    }
}

impl ReplaceBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::invalid(format!(
                "keep_prob must be in (0, 1], got {}",
                self.keep_prob
            )));
        }
        if self.block_size == 0 || self.block_size.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "block size must be odd, got {}",
                self.block_size
            )));
        }
        if !(self.threshold_ratio > 0.0 && self.threshold_ratio < 1.0) {
            return Err(Error::invalid(format!(
                "threshold ratio must be in (0, 1), got {}",
                self.threshold_ratio
            )));
        }
        Ok(())
    }

    /// Whether replacement happens at global step `step`.
    pub fn active_at(&self, step: u64) -> bool {
        match self.schedule {
            Schedule::AllTime => true,
            Schedule::Alternate => step.is_multiple_of(2),
        }
    }

    fn mask_config(&self) -> MaskGenConfig {
        MaskGenConfig {
            keep_prob: self.keep_prob,
            block_size: self.block_size,
            mode: self.sampling_mode,
        }
    }
}

/// `f_orig` where `mask` is 1, `f_bg` where it is 0.
///
/// For a binary mask this is exactly `f_orig ⊙ B + f_bg ⊙ (1 − B)`, computed by
/// selection so that all-ones and all-zeros masks return their operand
/// bit-for-bit. `mask` has shape `(1, 1, H, W)` or `(N, 1, H, W)`.
pub fn replace(f_orig: &Tensor, f_bg: &Tensor, mask: &Tensor) -> Result<Tensor> {
    f_orig.ensure_same_shape(f_bg, "replace")?;
    let s = f_orig.shape();
    let m = mask.shape();
    if m.c != 1 || m.h != s.h || m.w != s.w || !(m.n == 1 || m.n == s.n) {
        return Err(Error::shape(format!(
            "replace: mask {m} does not broadcast over {s}"
        )));
    }
    let mut out = f_orig.clone();
    for n in 0..s.n {
        let keep = mask.plane(if m.n == 1 { 0 } else { n }, 0);
        for c in 0..s.c {
            let bg = f_bg.plane(n, c);
            for ((o, &k), &b) in out.plane_mut(n, c).iter_mut().zip(keep).zip(bg) {
                if k == 0.0 {
                    *o = b;
                }
            }
        }
    }
    Ok(out)
}

/// Hook-point features of the masked image.
#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundFeatures {
    pub block2: Tensor,
    pub block3: Tensor,
}

impl BackgroundFeatures {
    pub fn at(&self, hook: HookPoint) -> &Tensor {
        match hook {
            HookPoint::Block2 => &self.block2,
            HookPoint::Block3 => &self.block3,
        }
    }
}

/// Backbone features of `image_mask ⊙ x` with the model's current weights.
///
/// Nothing is retained for backprop: the result is a constant. When
/// `shuffle_rng` is given, each hook's map is spatially permuted per image
/// with the stream it returns for `(hook, image)`.
pub fn background_features(
    model: &MiniCnn,
    x: &Tensor,
    image_mask: &Tensor,
    shuffle_rng: Option<&dyn Fn(HookPoint, usize) -> rng::Rng>,
) -> Result<BackgroundFeatures> {
    let masked = elementwise_mul(x, image_mask)?;
    let (block2, block3) = model.forward_backbone_detached(&masked)?;
    let mut bg = BackgroundFeatures { block2, block3 };
    if let Some(make_rng) = shuffle_rng {
        for hook in [HookPoint::Block2, HookPoint::Block3] {
            let f = bg.at(hook);
            let s = f.shape();
            let perms: Vec<_> = (0..s.n)
                .map(|n| spatial_permutation(s.plane(), &mut make_rng(hook, n)))
                .collect();
            let shuffled = apply_spatial_permutation(f, &perms)?;
            match hook {
                HookPoint::Block2 => bg.block2 = shuffled,
                HookPoint::Block3 => bg.block3 = shuffled,
            }
        }
    }
    Ok(bg)
}

/// Masks and background used at one hook point.
#[derive(Clone, Debug)]
pub struct HookReplacement {
    pub hook: HookPoint,
    /// Per-image feature-level keep masks.
    pub masks: Vec<BinaryMask>,
    /// The (shuffled) background features substituted where a mask is 0.
    pub background: Tensor,
}

/// Everything one ReplaceBlock training forward produced.
#[derive(Clone, Debug)]
pub struct ReplaceBlockPass {
    pub trace: Trace,
    /// False on steps the schedule skips; the pass is then a plain forward.
    pub applied: bool,
    pub attention: Vec<AttentionMap>,
    pub tcdm: Vec<BinaryMask>,
    pub image_masks: Vec<BinaryMask>,
    pub hooks: Vec<HookReplacement>,
}

impl ReplaceBlockPass {
    pub fn logits(&self) -> &Tensor {
        &self.trace.logits
    }

    pub fn hook(&self, hook: HookPoint) -> Option<&HookReplacement> {
        self.hooks.iter().find(|h| h.hook == hook)
    }
}

/// One ReplaceBlock training forward. Unavailable in [`Mode::Eval`].
pub fn replace_block_apply(
    model: &MiniCnn,
    x: &Tensor,
    labels: &[usize],
    config: &ReplaceBlockConfig,
    ctx: &StepContext,
    mode: Mode,
) -> Result<ReplaceBlockPass> {
    if mode == Mode::Eval {
        return Err(Error::InferenceMode);
    }
    config.validate()?;
    if !config.active_at(ctx.step) || config.hook_points.is_empty() {
        return Ok(ReplaceBlockPass {
            trace: model.forward_train(x)?,
            applied: false,
            attention: Vec::new(),
            tcdm: Vec::new(),
            image_masks: Vec::new(),
            hooks: Vec::new(),
        });
    }
    let xs = x.shape();
    if labels.len() != xs.n {
        return Err(Error::shape(format!(
            "{} labels for a batch of {}",
            labels.len(),
            xs.n
        )));
    }

    let clean = model.forward_backbone(x)?;

    let attention = compute_cam(&clean.block3, &model.classifier, labels)?;
    let tcdm = attention
        .iter()
        .map(|a| threshold_to_tcdm(a, config.threshold_ratio))
        .collect::<Result<Vec<_>>>()?;
    let image_masks = tcdm
        .iter()
        .map(|m| tcdm_to_image_mask(m, xs.h, xs.w))
        .collect::<Result<Vec<_>>>()?;

    let shuffle = |hook: HookPoint, n: usize| {
        ctx.rng(Stream::Shuffle, &[hook.block_index() as u64, n as u64])
    };
    let background = background_features(
        model,
        x,
        &stack_masks(&image_masks)?,
        config
            .shuffle
            .then_some(&shuffle as &dyn Fn(HookPoint, usize) -> rng::Rng),
    )?;

    let mut hooks = Vec::with_capacity(config.hook_points.len());
    for &hook in &[HookPoint::Block2, HookPoint::Block3] {
        if !config.hook_points.contains(&hook) {
            continue;
        }
        let s = background.at(hook).shape();
        let masks = attention
            .iter()
            .enumerate()
            .map(|(n, a)| {
                let att = a.resized(s.h, s.w)?;
                let mut rng = ctx.rng(Stream::Seeds, &[hook.block_index() as u64, n as u64]);
                sample_block_mask(
                    &config.mask_config(),
                    Some(att.values()),
                    s.h,
                    s.w,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        hooks.push(HookReplacement {
            hook,
            masks,
            background: background.at(hook).clone(),
        });
    }

    let edit_for = |hook: HookPoint| -> Result<Option<HookEdit>> {
        hooks
            .iter()
            .find(|h| h.hook == hook)
            .map(|h| {
                Ok(HookEdit::Replace {
                    keep: stack_masks(&h.masks)?,
                    background: h.background.clone(),
                })
            })
            .transpose()
    };

    // Blocks 1–2 are shared with the clean pass; block 3 is recomputed only
    // when its input was replaced.
    let mut caches = clean.caches;
    let mut hook_scale = vec![None, None, None];
    let mut f3 = clean.block3;
    if let Some(edit) = edit_for(HookPoint::Block2)? {
        let f2 = edit.apply(&clean.block2)?;
        hook_scale[1] = Some(edit.grad_scale().clone());
        let (out, cache) = model.block_forward(2, &f2)?;
        f3 = out;
        caches[2] = cache;
    }
    if let Some(edit) = edit_for(HookPoint::Block3)? {
        f3 = edit.apply(&f3)?;
        hook_scale[2] = Some(edit.grad_scale().clone());
    }
    let (logits, head) = model.forward_head(&f3)?;

    Ok(ReplaceBlockPass {
        trace: Trace {
            blocks: caches,
            hook_scale,
            head,
            logits,
        },
        applied: true,
        attention,
        tcdm,
        image_masks,
        hooks,
    })
}

/// Training forward with fixed, caller-supplied replacements. Backgrounds are
/// treated as constants.
pub fn replace_block_with_masks(
    model: &MiniCnn,
    x: &Tensor,
    replacements: &[HookReplacement],
) -> Result<Trace> {
    forward_with_edits(model, x, |block, _| {
        let Some(hook) = HookPoint::from_block_index(block) else {
            return Ok(None);
        };
        replacements
            .iter()
            .find(|r| r.hook == hook)
            .map(|r| {
                Ok(HookEdit::Replace {
                    keep: stack_masks(&r.masks)?,
                    background: r.background.clone(),
                })
            })
            .transpose()
    })
}
