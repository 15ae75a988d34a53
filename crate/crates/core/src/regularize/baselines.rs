//! Comparison regularizers: DropBlock, SpatialDropout, Dropout and Cutout.
//!
//! The feature-level ones are expressed as multiplicative [`HookEdit`]s so the
//! training pass can reuse the multiplier in backward.

use rand::{Rng, SeedableRng};

use super::HookEdit;
use crate::cam::BinaryMask;
use crate::error::{Error, Result};
use crate::mask::{sample_block_mask, MaskGenConfig, SamplingMode};
use crate::tensor::{Shape, Tensor};

fn check_keep_prob(keep_prob: f64) -> Result<()> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::invalid(format!(
            "keep_prob must be in (0, 1], got {keep_prob}"
        )));
    }
    Ok(())
}

/// Per-image multiplier `mask · |mask| / Σ mask` for a batch of spatial masks.
/// A fully dropped mask becomes all zeros.
pub fn drop_block_scale(masks: &[BinaryMask]) -> Result<Tensor> {
    let first = masks.first().ok_or_else(|| Error::invalid("no masks"))?;
    let (h, w) = (first.height(), first.width());
    let mut out = Tensor::zeros(Shape::new(masks.len(), 1, h, w));
    for (n, m) in masks.iter().enumerate() {
        if (m.height(), m.width()) != (h, w) {
            return Err(Error::shape("masks in a batch must share a size"));
        }
        let ones = m.count_ones();
        if ones == 0 {
            continue;
        }
        let scale = (h * w) as f32 / ones as f32;
        for (dst, &b) in out.plane_mut(n, 0).iter_mut().zip(m.bits()) {
            *dst = b as f32 * scale;
        }
    }
    Ok(out)
}

/// DropBlock with uniform seeds, one mask per image shared across channels.
/// `image_rng(n)` supplies the stream for image `n`.
pub fn drop_block_edit(
    shape: Shape,
    keep_prob: f64,
    block_size: usize,
    mut image_rng: impl FnMut(usize) -> crate::rng::Rng,
) -> Result<HookEdit> {
    let cfg = MaskGenConfig {
        keep_prob,
        block_size,
        mode: SamplingMode::Uniform,
    };
    let masks = (0..shape.n)
        .map(|n| sample_block_mask(&cfg, None, shape.h, shape.w, &mut image_rng(n)))
        .collect::<Result<Vec<_>>>()?;
    Ok(HookEdit::Scale(drop_block_scale(&masks)?))
}

pub fn drop_block_apply<R: Rng + ?Sized>(
    f: &Tensor,
    keep_prob: f64,
    block_size: usize,
    rng: &mut R,
) -> Result<Tensor> {
    let edit = drop_block_edit(f.shape(), keep_prob, block_size, |_| {
        crate::rng::Rng::seed_from_u64(rng.random())
    })?;
    edit.apply(f)
}

/// Whole-channel Bernoulli drop with `1 / keep_prob` rescaling.
pub fn spatial_dropout_edit<R: Rng + ?Sized>(
    shape: Shape,
    keep_prob: f64,
    rng: &mut R,
) -> Result<HookEdit> {
    check_keep_prob(keep_prob)?;
    let inv = (1.0 / keep_prob) as f32;
    let mut scale = Tensor::zeros(shape);
    for n in 0..shape.n {
        for c in 0..shape.c {
            let v = if rng.random::<f64>() < keep_prob {
                inv
            } else {
                0.0
            };
            scale.plane_mut(n, c).fill(v);
        }
    }
    Ok(HookEdit::Scale(scale))
}

pub fn spatial_dropout_apply<R: Rng + ?Sized>(
    f: &Tensor,
    keep_prob: f64,
    rng: &mut R,
) -> Result<Tensor> {
    spatial_dropout_edit(f.shape(), keep_prob, rng)?.apply(f)
}

/// Elementwise Bernoulli drop with `1 / keep_prob` rescaling.
pub fn dropout_edit<R: Rng + ?Sized>(
    shape: Shape,
    keep_prob: f64,
    rng: &mut R,
) -> Result<HookEdit> {
    check_keep_prob(keep_prob)?;
    let inv = (1.0 / keep_prob) as f32;
    let data = (0..shape.numel())
        .map(|_| {
            if rng.random::<f64>() < keep_prob {
                inv
            } else {
                0.0
            }
        })
        .collect();
    Ok(HookEdit::Scale(Tensor::from_vec(shape, data)?))
}

pub fn dropout_apply<R: Rng + ?Sized>(f: &Tensor, keep_prob: f64, rng: &mut R) -> Result<Tensor> {
    dropout_edit(f.shape(), keep_prob, rng)?.apply(f)
}

/// Zeros one `size × size` square per image (all channels) around a uniformly
/// drawn centre, clipped at the borders.
pub fn cutout_apply<R: Rng + ?Sized>(x: &Tensor, size: usize, rng: &mut R) -> Result<Tensor> {
    let s = x.shape();
    s.ensure_nonempty("cutout input")?;
    let mut out = x.clone();
    for n in 0..s.n {
        let cy = rng.random_range(0..s.h);
        let cx = rng.random_range(0..s.w);
        let (y0, y1) = (cy.saturating_sub(size / 2), (cy + size - size / 2).min(s.h));
        let (x0, x1) = (cx.saturating_sub(size / 2), (cx + size - size / 2).min(s.w));
        for c in 0..s.c {
            let plane = out.plane_mut(n, c);
            for y in y0..y1 {
                plane[y * s.w + x0..y * s.w + x1].fill(0.0);
            }
        }
    }
    Ok(out)
}
