use rand::Rng;

use super::LabeledImage;
use crate::tensor::Tensor;

/// Zero padding added on every side before the random crop.
pub const PAD: usize = 4;

/// The random choices of one augmentation: an optional horizontal flip, then
/// the top-left corner of the crop window inside the padded image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub dy: usize,
    pub dx: usize,
}

impl AugmentDraw {
    /// No flip, centred crop: leaves the image unchanged.
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        flip: false,
        dy: PAD,
        dx: PAD,
    };

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        AugmentDraw {
            flip: rng.random_bool(0.5),
            dy: rng.random_range(0..=2 * PAD),
            dx: rng.random_range(0..=2 * PAD),
        }
    }
}

/// Flip (if drawn), zero-pad by [`PAD`], crop back to the original size at
/// `(dy, dx)`. Offsets beyond `2·PAD` are clamped.
pub fn augment_with(img: &LabeledImage, draw: AugmentDraw) -> LabeledImage {
    let s = img.pixels.shape();
    let (dy, dx) = (draw.dy.min(2 * PAD), draw.dx.min(2 * PAD));
    let mut out = Tensor::zeros(s);
    for c in 0..s.c {
        let src = img.pixels.plane(0, c);
        let dst = out.plane_mut(0, c);
        for y in 0..s.h {
            // padded row y + dy holds source row y + dy - PAD
            let Some(sy) = (y + dy).checked_sub(PAD).filter(|&r| r < s.h) else {
                continue;
            };
            for x in 0..s.w {
                let Some(sx) = (x + dx).checked_sub(PAD).filter(|&q| q < s.w) else {
                    continue;
                };
                let sx = if draw.flip { s.w - 1 - sx } else { sx };
                dst[y * s.w + x] = src[sy * s.w + sx];
            }
        }
    }
    LabeledImage {
        pixels: out,
        label: img.label,
    }
}

pub fn augment<R: Rng + ?Sized>(img: &LabeledImage, rng: &mut R) -> LabeledImage {
    augment_with(img, AugmentDraw::sample(rng))
}
