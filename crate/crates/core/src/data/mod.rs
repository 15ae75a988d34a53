//! Datasets, file formats, augmentation, normalization and batching.

mod augment;
mod batch;
mod cifar;
mod mnist;
mod normalize;
mod synthetic;

pub use augment::{augment, augment_with, AugmentDraw, PAD};
pub use batch::{epoch_order, Batch, BatchIterator};
pub use cifar::{
    encode_cifar10, load_cifar10, load_cifar10_file, parse_cifar10, write_cifar10, CIFAR10_RECORD,
};
pub use mnist::{encode_mnist_idx, load_mnist, load_mnist_idx, parse_mnist_idx};
pub use normalize::Normalization;
pub use synthetic::synthetic_blobs;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// One image `(1, C, H, W)` with pixels in `[0, 1]`, and its class.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub pixels: Tensor,
    pub label: usize,
}

/// An in-memory labelled image set.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.shape().n != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.shape().n,
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Shape of a single image, with `n = 1`.
    pub fn image_shape(&self) -> Shape {
        Shape {
            n: 1,
            ..self.images.shape()
        }
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> LabeledImage {
        LabeledImage {
            pixels: Tensor::from_vec(self.image_shape(), self.images.item(i).to_vec())
                .expect("item size"),
            label: self.labels[i],
        }
    }

    /// Images and labels at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let shape = Shape {
            n: indices.len(),
            ..self.images.shape()
        };
        let mut x = Tensor::zeros(shape);
        let mut labels = Vec::with_capacity(indices.len());
        for (dst, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::invalid(format!(
                    "index {i} out of range for {} samples",
                    self.len()
                )));
            }
            x.item_mut(dst).copy_from_slice(self.images.item(i));
            labels.push(self.labels[i]);
        }
        Ok((x, labels))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let (images, labels) = self.gather(indices)?;
        Dataset::new(images, labels, self.num_classes)
    }

    /// The first `n` samples, taking classes in turn so the subset is as
    /// balanced as the data allows. Order follows the dataset.
    pub fn balanced_subset(&self, n: usize) -> Result<Dataset> {
        if n >= self.len() {
            return Ok(self.clone());
        }
        let k = self.num_classes;
        let mut quota: Vec<usize> = (0..k).map(|c| n / k + usize::from(c < n % k)).collect();
        let mut picked = Vec::with_capacity(n);
        for (i, &l) in self.labels.iter().enumerate() {
            if quota[l] > 0 {
                quota[l] -= 1;
                picked.push(i);
            }
        }
        // Classes with too few samples leave room; fill it in dataset order.
        if picked.len() < n {
            let mut taken = vec![false; self.len()];
            picked.iter().for_each(|&i| taken[i] = true);
            picked.extend(
                (0..self.len())
                    .filter(|&i| !taken[i])
                    .take(n - picked.len()),
            );
            picked.sort_unstable();
        }
        self.subset(&picked)
    }
}
