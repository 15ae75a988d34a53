use serde::{Deserialize, Serialize};

use super::{cosine_lr, count_correct, softmax_cross_entropy, MiniCnn, Sgd, TrainConfig};
use crate::data::{BatchIterator, Dataset, Normalization};
use crate::error::{Error, Result};
use crate::regularize::{training_forward, RegularizerKind, ReplaceBlockConfig, StepContext};

/// One row of `metrics.csv`. Accuracies are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_top1: f64,
    pub test_top1: f64,
    pub lr: f64,
}

/// Top-1 accuracy (percent) of the plain model over `data`.
pub fn evaluate(
    model: &MiniCnn,
    data: &Dataset,
    batch_size: usize,
    norm: Option<&Normalization>,
) -> Result<f64> {
    let mut correct = 0;
    for batch in BatchIterator::sequential(data, batch_size, norm)? {
        let batch = batch?;
        correct += count_correct(&model.infer(&batch.x)?, &batch.labels);
    }
    Ok(100.0 * correct as f64 / data.len() as f64)
}

/// The epoch loop state: model, optimizer, regularizer and the global step
/// that drives the cosine schedule and every per-step random stream.
pub struct Trainer {
    pub model: MiniCnn,
    optimizer: Sgd,
    config: TrainConfig,
    regularizer: RegularizerKind,
    replace_block: ReplaceBlockConfig,
    normalization: Option<Normalization>,
    augment: bool,
    epoch: usize,
    step: u64,
    total_steps: usize,
}

impl Trainer {
    /// `train_len` fixes the schedule length: `epochs · ⌈train_len / batch⌉`.
    pub fn new(
        model: MiniCnn,
        config: TrainConfig,
        regularizer: RegularizerKind,
        replace_block: ReplaceBlockConfig,
        train_len: usize,
    ) -> Result<Self> {
        config.validate()?;
        regularizer.validate()?;
        if regularizer == RegularizerKind::ReplaceBlock {
            replace_block.validate()?;
        }
        if train_len == 0 {
            return Err(Error::EmptyDataset);
        }
        let optimizer = Sgd::new(&model, config.momentum, config.weight_decay);
        let total_steps = config.epochs * train_len.div_ceil(config.batch_size);
        Ok(Trainer {
            model,
            optimizer,
            config,
            regularizer,
            replace_block,
            normalization: None,
            augment: true,
            epoch: 0,
            step: 0,
            total_steps,
        })
    }

    pub fn with_normalization(mut self, norm: Normalization) -> Self {
        self.normalization = Some(norm);
        self
    }

    /// Random flip and crop on training batches (on by default).
    pub fn with_augmentation(mut self, on: bool) -> Self {
        self.augment = on;
        self
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// One full pass over `train`, then top-1 on `test`.
    pub fn train_epoch(&mut self, train: &Dataset, test: &Dataset) -> Result<RunRecord> {
        let seed = self.config.seed;
        let batches = BatchIterator::training(
            train,
            self.config.batch_size,
            seed,
            self.epoch as u64,
            self.augment,
            self.normalization.as_ref(),
        )?;
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        let mut seen = 0usize;
        let mut lr = cosine_lr(self.step_index(), self.total_steps, self.config.lr0)?;
        for batch in batches {
            let batch = batch?;
            let ctx = StepContext {
                seed,
                step: self.step,
            };
            let trace = training_forward(
                &self.model,
                &batch.x,
                &batch.labels,
                &self.regularizer,
                &self.replace_block,
                &ctx,
            )?;
            let (loss, grad) = softmax_cross_entropy(&trace.logits, &batch.labels)?;
            let grads = self.model.backward(&trace, &grad)?;
            lr = cosine_lr(self.step_index(), self.total_steps, self.config.lr0)?;
            self.optimizer.step(&mut self.model, &grads, lr)?;

            let n = batch.labels.len();
            loss_sum += loss as f64 * n as f64;
            correct += count_correct(&trace.logits, &batch.labels);
            seen += n;
            self.step += 1;
        }
        self.epoch += 1;
        let test_top1 = evaluate(
            &self.model,
            test,
            self.config.batch_size,
            self.normalization.as_ref(),
        )?;
        Ok(RunRecord {
            epoch: self.epoch,
            train_loss: loss_sum / seen as f64,
            train_top1: 100.0 * correct as f64 / seen as f64,
            test_top1,
            lr: lr as f64,
        })
    }

    /// Steps past the planned schedule (more epochs than configured) stay at
    /// the final rate.
    fn step_index(&self) -> usize {
        (self.step as usize).min(self.total_steps)
    }
}
