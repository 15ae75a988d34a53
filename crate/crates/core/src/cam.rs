//! Class activation maps, the target-class drop mask derived from them, and
//! heatmap export.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::tensor::{upsample_nearest, Map2d, Shape, Tensor};

/// Nonnegative spatial attention for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    values: Map2d,
    source_label: usize,
}

impl AttentionMap {
    /// Negative entries are clamped to zero.
    pub fn new(values: Map2d, source_label: usize) -> Self {
        AttentionMap {
            values: values.map(|v| if v > 0.0 { v } else { 0.0 }),
            source_label,
        }
    }

    pub fn values(&self) -> &Map2d {
        &self.values
    }

    pub fn source_label(&self) -> usize {
        self.source_label
    }

    pub fn max(&self) -> f32 {
        self.values.max()
    }

    pub fn is_zero(&self) -> bool {
        self.values.data().iter().all(|&v| v == 0.0)
    }

    /// Nearest-neighbour resample to a (larger or equal) resolution.
    pub fn resized(&self, h: usize, w: usize) -> Result<AttentionMap> {
        if (h, w) == (self.values.height(), self.values.width()) {
            return Ok(self.clone());
        }
        Ok(AttentionMap {
            values: upsample_nearest(&self.values, h, w)?,
            source_label: self.source_label,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resolution {
    Feature,
    Image,
}

/// A `{0, 1}` grid where 1 keeps a position and 0 drops or replaces it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    bits: Vec<u8>,
    resolution: Resolution,
}

impl BinaryMask {
    pub fn ones(h: usize, w: usize, resolution: Resolution) -> Self {
        BinaryMask {
            h,
            w,
            bits: vec![1; h * w],
            resolution,
        }
    }

    pub fn from_bits(h: usize, w: usize, bits: Vec<u8>, resolution: Resolution) -> Result<Self> {
        if bits.len() != h * w {
            return Err(Error::shape(format!(
                "{} bits cannot fill a {h}x{w} mask",
                bits.len()
            )));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::invalid(format!("mask value {b} is not 0 or 1")));
        }
        Ok(BinaryMask {
            h,
            w,
            bits,
            resolution,
        })
    }

    pub fn from_fn(
        h: usize,
        w: usize,
        resolution: Resolution,
        mut keep: impl FnMut(usize, usize) -> bool,
    ) -> Self {
        let mut bits = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                bits.push(keep(y, x) as u8);
            }
        }
        BinaryMask {
            h,
            w,
            bits,
            resolution,
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn keep(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.w + x] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn count_zeros(&self) -> usize {
        self.bits.len() - self.count_ones()
    }

    pub fn dropped_fraction(&self) -> f64 {
        self.count_zeros() as f64 / self.bits.len() as f64
    }

    pub fn to_map(&self) -> Map2d {
        Map2d::from_vec(
            self.h,
            self.w,
            self.bits.iter().map(|&b| b as f32).collect(),
        )
        .expect("consistent dims")
    }

    /// The mask as a `(1, 1, H, W)` tensor of 0.0/1.0.
    pub fn to_tensor(&self) -> Tensor {
        self.to_map().to_tensor()
    }
}

/// Stacks per-image masks into an `(N, 1, H, W)` tensor.
pub fn stack_masks(masks: &[BinaryMask]) -> Result<Tensor> {
    let first = masks
        .first()
        .ok_or_else(|| Error::invalid("no masks to stack"))?;
    let (h, w) = (first.h, first.w);
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if (m.h, m.w) != (h, w) {
            return Err(Error::shape(format!(
                "cannot stack a {}x{} mask with {h}x{w} masks",
                m.h, m.w
            )));
        }
        data.extend(m.bits.iter().map(|&b| b as f32));
    }
    Tensor::from_vec(Shape::new(masks.len(), 1, h, w), data)
}

/// Class activation map of each image for its given label:
/// `cam[i, j] = Σ_k W[label, k] · F[k, i, j]`, negatives clamped to zero.
pub fn compute_cam(
    features: &Tensor,
    classifier: &Linear,
    labels: &[usize],
) -> Result<Vec<AttentionMap>> {
    let s = features.shape();
    if s.c != classifier.in_features {
        return Err(Error::shape(format!(
            "classifier has {} columns, features have {} channels",
            classifier.in_features, s.c
        )));
    }
    if labels.len() != s.n {
        return Err(Error::shape(format!(
            "{} labels for {} feature maps",
            labels.len(),
            s.n
        )));
    }
    labels
        .iter()
        .enumerate()
        .map(|(n, &label)| {
            if label >= classifier.out_features {
                return Err(Error::LabelOutOfRange {
                    label,
                    num_classes: classifier.out_features,
                });
            }
            let mut raw = vec![0.0f32; s.plane()];
            for (k, &wk) in classifier.row(label).iter().enumerate() {
                for (r, &f) in raw.iter_mut().zip(features.plane(n, k)) {
                    *r += wk * f;
                }
            }
            Ok(AttentionMap::new(Map2d::from_vec(s.h, s.w, raw)?, label))
        })
        .collect()
}

/// Target-class drop mask: 0 where attention exceeds `ratio · max`, else 1.
/// An all-zero map keeps everything.
pub fn threshold_to_tcdm(map: &AttentionMap, threshold_ratio: f32) -> Result<BinaryMask> {
    if !(threshold_ratio > 0.0 && threshold_ratio < 1.0) {
        return Err(Error::invalid(format!(
            "threshold ratio must be in (0, 1), got {threshold_ratio}"
        )));
    }
    let v = map.values();
    let max = map.max();
    if !(max > 0.0) {
        return Ok(BinaryMask::ones(v.height(), v.width(), Resolution::Feature));
    }
    let cut = threshold_ratio * max;
    Ok(BinaryMask::from_fn(
        v.height(),
        v.width(),
        Resolution::Feature,
        |y, x| v.get(y, x) <= cut,
    ))
}

/// Lifts a feature-resolution drop mask to image resolution (nearest neighbour).
pub fn tcdm_to_image_mask(mask: &BinaryMask, img_h: usize, img_w: usize) -> Result<BinaryMask> {
    let up = upsample_nearest(&mask.to_map(), img_h, img_w)?;
    Ok(BinaryMask {
        h: img_h,
        w: img_w,
        bits: up.data().iter().map(|&v| v as u8).collect(),
        resolution: Resolution::Image,
    })
}

/// Binary PGM (`P5`) encoding, min-max scaled to 0–255. A constant map
/// encodes as all zeros.
pub fn encode_pgm(map: &Map2d) -> Result<Vec<u8>> {
    if map.is_empty() {
        return Err(Error::invalid("cannot encode an empty map"));
    }
    let (lo, hi) = (map.min(), map.max());
    let span = hi - lo;
    let mut out = format!("P5 {} {} 255\n", map.width(), map.height()).into_bytes();
    out.extend(map.data().iter().map(|&v| {
        if span > 0.0 && span.is_finite() {
            (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    Ok(out)
}

pub fn export_heatmap(map: &AttentionMap, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(map.values())?).map_err(|e| Error::io(path, e))
}
