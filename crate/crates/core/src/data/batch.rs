use rand::seq::SliceRandom;

use super::{augment_with, AugmentDraw, Dataset, Normalization};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Shape;
use crate::tensor::Tensor;

/// The sample order of `epoch`: a permutation of `0..len` keyed by
/// `(seed, epoch)`.
pub fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::stream(seed, Stream::EpochOrder, &[epoch]));
    order
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<usize>,
    /// Dataset indices of the samples, in batch order.
    pub indices: Vec<usize>,
}

/// Batches over a dataset. Training iteration visits a seeded permutation and
/// augments each sample with a stream keyed by `(seed, epoch, sample index)`;
/// sequential iteration keeps dataset order with no augmentation. The last
/// batch may be short.
pub struct BatchIterator<'a> {
    data: &'a Dataset,
    batch_size: usize,
    order: Vec<usize>,
    pos: usize,
    augment: Option<(u64, u64)>,
    normalization: Option<&'a Normalization>,
}

impl<'a> BatchIterator<'a> {
    pub fn training(
        data: &'a Dataset,
        batch_size: usize,
        seed: u64,
        epoch: u64,
        augment: bool,
        normalization: Option<&'a Normalization>,
    ) -> Result<Self> {
        Self::check(data, batch_size)?;
        Ok(BatchIterator {
            data,
            batch_size,
            order: epoch_order(data.len(), seed, epoch),
            pos: 0,
            augment: augment.then_some((seed, epoch)),
            normalization,
        })
    }

    pub fn sequential(
        data: &'a Dataset,
        batch_size: usize,
        normalization: Option<&'a Normalization>,
    ) -> Result<Self> {
        Self::check(data, batch_size)?;
        Ok(BatchIterator {
            data,
            batch_size,
            order: (0..data.len()).collect(),
            pos: 0,
            augment: None,
            normalization,
        })
    }

    fn check(data: &Dataset, batch_size: usize) -> Result<()> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    fn make(&self, indices: &[usize]) -> Result<Batch> {
        let (mut x, labels) = self.data.gather(indices)?;
        if let Some((seed, epoch)) = self.augment {
            for (slot, &i) in indices.iter().enumerate() {
                let draw = AugmentDraw::sample(&mut rng::stream(
                    seed,
                    Stream::Augment,
                    &[epoch, i as u64],
                ));
                let out = augment_with(&self.data.get(i), draw);
                x.item_mut(slot).copy_from_slice(out.pixels.data());
            }
        }
        if let Some(norm) = self.normalization {
            norm.validate(x.shape().c)?;
            norm.apply_in_place(&mut x);
        }
        debug_assert_eq!(
            x.shape(),
            Shape {
                n: indices.len(),
                ..self.data.image_shape()
            }
        );
        Ok(Batch {
            x,
            labels,
            indices: indices.to_vec(),
        })
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.make(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}
