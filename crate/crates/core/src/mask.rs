//! Structured feature-level masks: seed-rate calibration, seed sampling
//! (attention-weighted or uniform) and expansion of seeds into square blocks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cam::{BinaryMask, Resolution};
use crate::error::{Error, Result};
use crate::tensor::Map2d;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Seed probability proportional to attention.
    RrSm,
    /// The same seed rate everywhere, as in DropBlock.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskGenConfig {
    pub keep_prob: f64,
    pub block_size: usize,
    pub mode: SamplingMode,
}

impl MaskGenConfig {
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::invalid(format!(
                "keep_prob must be in (0, 1], got {}",
                self.keep_prob
            )));
        }
        validate_block(self.block_size, h, w)
    }
}

fn validate_block(block_size: usize, h: usize, w: usize) -> Result<()> {
    if block_size == 0 || block_size.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "block size must be odd and positive, got {block_size}"
        )));
    }
    if block_size > h || block_size > w {
        return Err(Error::invalid(format!(
            "block size {block_size} exceeds {h}x{w} map"
        )));
    }
    Ok(())
}

/// Sampled block centres; 1 marks a seed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedMap {
    h: usize,
    w: usize,
    seeds: Vec<u8>,
}

impl SeedMap {
    pub fn empty(h: usize, w: usize) -> Self {
        SeedMap {
            h,
            w,
            seeds: vec![0; h * w],
        }
    }

    pub fn from_positions(h: usize, w: usize, positions: &[(usize, usize)]) -> Result<Self> {
        let mut m = SeedMap::empty(h, w);
        for &(y, x) in positions {
            if y >= h || x >= w {
                return Err(Error::invalid(format!(
                    "seed ({y}, {x}) outside {h}x{w} map"
                )));
            }
            m.seeds[y * w + x] = 1;
        }
        Ok(m)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn is_seed(&self, y: usize, x: usize) -> bool {
        self.seeds[y * self.w + x] == 1
    }

    pub fn count(&self) -> usize {
        self.seeds.iter().filter(|&&s| s == 1).count()
    }

    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.seeds
            .iter()
            .enumerate()
            .filter(|&(_, &s)| s == 1)
            .map(|(i, _)| (i / self.w, i % self.w))
    }
}

/// Half-open row and column ranges where a full block fits around a seed.
fn valid_region(
    block_size: usize,
    h: usize,
    w: usize,
) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let half = block_size / 2;
    (half..h - half, half..w - half)
}

/// Per-position seed rate so that expanded blocks cover about
/// `1 − keep_prob` of an `h × w` map:
/// `γ = (1 − keep_prob) / b² · (h·w) / ((h − b + 1)(w − b + 1))`.
pub fn calibrate_gamma(keep_prob: f64, block_size: usize, h: usize, w: usize) -> Result<f64> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::invalid(format!(
            "keep_prob must be in (0, 1], got {keep_prob}"
        )));
    }
    if block_size == 0 || block_size > h || block_size > w {
        return Err(Error::invalid(format!(
            "block size {block_size} does not fit {h}x{w}"
        )));
    }
    if keep_prob == 1.0 {
        return Ok(0.0);
    }
    let b = block_size as f64;
    let valid = ((h - block_size + 1) * (w - block_size + 1)) as f64;
    Ok((1.0 - keep_prob) / (b * b) * (h * w) as f64 / valid)
}

/// Attention-weighted seeds. On the valid region, `p_i = clamp(γ · m_i · V / Σ m, 0, 1)`
/// with `V` the number of valid positions, so the mean rate is `γ` when no
/// clamp binds. Zero attention mass yields no seeds.
pub fn sample_seeds_rrsm<R: Rng + ?Sized>(
    attention: &Map2d,
    gamma: f64,
    block_size: usize,
    rng: &mut R,
) -> Result<SeedMap> {
    let (h, w) = (attention.height(), attention.width());
    validate_block(block_size, h, w)?;
    if !(gamma >= 0.0) {
        return Err(Error::invalid(format!(
            "gamma must be nonnegative, got {gamma}"
        )));
    }
    let (rows, cols) = valid_region(block_size, h, w);
    let valid = (rows.len() * cols.len()) as f64;
    let mass: f64 = rows
        .clone()
        .flat_map(|y| cols.clone().map(move |x| (y, x)))
        .map(|(y, x)| attention.get(y, x).max(0.0) as f64)
        .sum();
    let mut seeds = SeedMap::empty(h, w);
    if gamma == 0.0 || !(mass > 0.0) {
        return Ok(seeds);
    }
    let scale = gamma * valid / mass;
    for y in rows {
        for x in cols.clone() {
            let p = (scale * attention.get(y, x).max(0.0) as f64).clamp(0.0, 1.0);
            if rng.random::<f64>() < p {
                seeds.seeds[y * w + x] = 1;
            }
        }
    }
    Ok(seeds)
}

/// I.i.d. `Bernoulli(γ)` seeds on the valid region.
pub fn sample_seeds_uniform<R: Rng + ?Sized>(
    gamma: f64,
    h: usize,
    w: usize,
    block_size: usize,
    rng: &mut R,
) -> Result<SeedMap> {
    validate_block(block_size, h, w)?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!(
            "gamma must be in [0, 1], got {gamma}"
        )));
    }
    let (rows, cols) = valid_region(block_size, h, w);
    let mut seeds = SeedMap::empty(h, w);
    for y in rows {
        for x in cols.clone() {
            if rng.random::<f64>() < gamma {
                seeds.seeds[y * w + x] = 1;
            }
        }
    }
    Ok(seeds)
}

/// Zeros every position within Chebyshev distance `⌊b/2⌋` of a seed; the
/// complement of a `b × b` max filter over the seed map.
pub fn expand_seeds(seeds: &SeedMap, block_size: usize) -> Result<BinaryMask> {
    let (h, w) = (seeds.h, seeds.w);
    validate_block(block_size, h, w)?;
    let half = block_size / 2;
    let (rows, cols) = valid_region(block_size, h, w);
    let mut bits = vec![1u8; h * w];
    for (y, x) in seeds.positions() {
        if !rows.contains(&y) || !cols.contains(&x) {
            return Err(Error::invalid(format!(
                "seed ({y}, {x}) outside the valid region for block size {block_size}"
            )));
        }
        for yy in y - half..=y + half {
            bits[yy * w + x - half..=yy * w + x + half].fill(0);
        }
    }
    BinaryMask::from_bits(h, w, bits, Resolution::Feature)
}

/// Calibrates γ for the map size, samples seeds per `config.mode` and expands
/// them. `attention` is only consulted in [`SamplingMode::RrSm`].
pub fn sample_block_mask<R: Rng + ?Sized>(
    config: &MaskGenConfig,
    attention: Option<&Map2d>,
    h: usize,
    w: usize,
    rng: &mut R,
) -> Result<BinaryMask> {
    config.validate(h, w)?;
    let gamma = calibrate_gamma(config.keep_prob, config.block_size, h, w)?;
    let seeds = match (config.mode, attention) {
        (SamplingMode::RrSm, Some(att)) => {
            if (att.height(), att.width()) != (h, w) {
                return Err(Error::shape(format!(
                    "attention {}x{} does not match mask {h}x{w}",
                    att.height(),
                    att.width()
                )));
            }
            sample_seeds_rrsm(att, gamma, config.block_size, rng)?
        }
        (SamplingMode::RrSm, None) => {
            return Err(Error::invalid(
                "attention-weighted sampling needs an attention map",
            ))
        }
        (SamplingMode::Uniform, _) => sample_seeds_uniform(gamma, h, w, config.block_size, rng)?,
    };
    expand_seeds(&seeds, config.block_size)
}
