//! CIFAR-10 binary batches: records of one label byte followed by 3072 pixel
//! bytes (R, G and B planes, each 32×32 row-major).

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const CIFAR10_RECORD: usize = 1 + 3 * 32 * 32;
const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "CIFAR-10",
        reason: reason.into(),
    }
}

pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR10_RECORD) {
        return Err(format_err(format!(
            "{} bytes is not a whole number of {CIFAR10_RECORD}-byte records",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR10_RECORD;
    let mut images = Tensor::zeros(Shape::new(n, 3, 32, 32));
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR10_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(format_err(format!("record {i} has label byte {}", rec[0])));
        }
        labels.push(rec[0] as usize);
        for (dst, &b) in images.item_mut(i).iter_mut().zip(&rec[1..]) {
            *dst = b as f32 / 255.0;
        }
    }
    Dataset::new(images, labels, 10)
}

pub fn load_cifar10_file(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar10(&bytes)
}

fn concat(parts: Vec<Dataset>) -> Result<Dataset> {
    let n: usize = parts.iter().map(Dataset::len).sum();
    let mut images = Tensor::zeros(Shape::new(n, 3, 32, 32));
    let mut labels = Vec::with_capacity(n);
    let mut at = 0;
    for p in &parts {
        let len = p.images().data().len();
        images.data_mut()[at..at + len].copy_from_slice(p.images().data());
        at += len;
        labels.extend_from_slice(p.labels());
    }
    Dataset::new(images, labels, 10)
}

/// Loads `(train, test)` from the five training batches and the test batch
/// in `dir`.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = TRAIN_FILES
        .iter()
        .map(|f| load_cifar10_file(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    Ok((concat(train)?, load_cifar10_file(&dir.join(TEST_FILE))?))
}

/// Encodes a 3-channel 32×32 dataset as CIFAR-10 records, rounding pixels
/// to the nearest byte.
pub fn encode_cifar10(data: &Dataset) -> Result<Vec<u8>> {
    if data.image_shape() != Shape::new(1, 3, 32, 32) || data.num_classes() > 10 {
        return Err(Error::shape(format!(
            "CIFAR-10 holds 3×32×32 images of at most 10 classes, got {}",
            data.image_shape()
        )));
    }
    let mut out = Vec::with_capacity(data.len() * CIFAR10_RECORD);
    for i in 0..data.len() {
        out.push(data.labels()[i] as u8);
        out.extend(
            data.images()
                .item(i)
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    Ok(out)
}

/// Writes `train` split over the five training batch files and `test` as the
/// test batch, in the standard directory layout.
pub fn write_cifar10(dir: &Path, train: &Dataset, test: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let per = train.len().div_ceil(TRAIN_FILES.len());
    for (k, f) in TRAIN_FILES.iter().enumerate() {
        let idx: Vec<usize> = (k * per..((k + 1) * per).min(train.len())).collect();
        let part = train.subset(&idx)?;
        let path = dir.join(f);
        std::fs::write(&path, encode_cifar10(&part)?).map_err(|e| Error::io(path, e))?;
    }
    let path = dir.join(TEST_FILE);
    std::fs::write(&path, encode_cifar10(test)?).map_err(|e| Error::io(path, e))
}
