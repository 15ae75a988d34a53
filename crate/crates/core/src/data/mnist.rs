//! MNIST IDX files. Images are zero-padded from 28×28 to 32×32.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;
const SIDE: usize = 28;
const PADDED: usize = 32;

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "MNIST IDX",
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err("truncated header"))
}

pub fn parse_mnist_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    if be_u32(images, 0)? != IMAGE_MAGIC {
        return Err(format_err(format!(
            "image magic {} (want {IMAGE_MAGIC})",
            be_u32(images, 0)?
        )));
    }
    if be_u32(labels, 0)? != LABEL_MAGIC {
        return Err(format_err(format!(
            "label magic {} (want {LABEL_MAGIC})",
            be_u32(labels, 0)?
        )));
    }
    let n = be_u32(images, 4)? as usize;
    let (rows, cols) = (be_u32(images, 8)? as usize, be_u32(images, 12)? as usize);
    let n_labels = be_u32(labels, 4)? as usize;
    if n != n_labels {
        return Err(format_err(format!("{n} images but {n_labels} labels")));
    }
    if (rows, cols) != (SIDE, SIDE) {
        return Err(format_err(format!(
            "images are {rows}×{cols}, expected 28×28"
        )));
    }
    let pixels = &images[16..];
    let label_bytes = &labels[8..];
    if pixels.len() != n * SIDE * SIDE || label_bytes.len() != n {
        return Err(format_err("payload length does not match header"));
    }
    let off = (PADDED - SIDE) / 2;
    let mut x = Tensor::zeros(Shape::new(n, 1, PADDED, PADDED));
    for i in 0..n {
        let src = &pixels[i * SIDE * SIDE..(i + 1) * SIDE * SIDE];
        let dst = x.item_mut(i);
        for y in 0..SIDE {
            for (d, &b) in dst[(y + off) * PADDED + off..][..SIDE]
                .iter_mut()
                .zip(&src[y * SIDE..])
            {
                *d = b as f32 / 255.0;
            }
        }
    }
    let labels = label_bytes.iter().map(|&b| b as usize).collect();
    Dataset::new(x, labels, 10)
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    parse_mnist_idx(&images, &labels)
}

/// Loads `(train, test)` from the standard file names in `dir`.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_mnist_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_mnist_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, test))
}

/// Encodes 28×28 byte images and labels as an (images, labels) IDX pair.
pub fn encode_mnist_idx(images: &[[u8; SIDE * SIDE]], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + images.len() * SIDE * SIDE);
    img.extend(IMAGE_MAGIC.to_be_bytes());
    img.extend((images.len() as u32).to_be_bytes());
    img.extend((SIDE as u32).to_be_bytes());
    img.extend((SIDE as u32).to_be_bytes());
    images.iter().for_each(|i| img.extend_from_slice(i));
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend(LABEL_MAGIC.to_be_bytes());
    lab.extend((labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}
