use std::fs;
use std::path::{Path, PathBuf};

use super::{DatasetSource, DatasetSpec, ExperimentConfig};
use crate::cam::{compute_cam, export_heatmap};
use crate::data::{load_cifar10, load_mnist, synthetic_blobs, Dataset, Normalization};
use crate::error::{Error, Result};
use crate::nn::{checkpoint, Architecture, MiniCnn, RunRecord, Trainer};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HEATMAP_DIR: &str = "heatmaps";
const PROBES: usize = 8;

/// Loads `(train, test)` and applies the class-balanced subsets.
pub fn load_datasets(spec: &DatasetSpec) -> Result<(Dataset, Dataset)> {
    let (train, test) = match &spec.source {
        DatasetSource::Cifar10 { dir } => load_cifar10(dir)?,
        DatasetSource::Mnist { dir } => load_mnist(dir)?,
        &DatasetSource::Synthetic {
            train,
            test,
            num_classes,
            seed,
        } => {
            let all = synthetic_blobs(train + test, num_classes, 3, 32, seed)?;
            let idx: Vec<usize> = (0..train + test).collect();
            (all.subset(&idx[..train])?, all.subset(&idx[train..])?)
        }
    };
    let train = match spec.train_subset {
        Some(n) => train.balanced_subset(n)?,
        None => train,
    };
    let test = match spec.test_subset {
        Some(n) => test.balanced_subset(n)?,
        None => test,
    };
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((train, test))
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    /// The config as written to `config.json`.
    pub config: ExperimentConfig,
    pub records: Vec<RunRecord>,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_heatmaps(
    model: &MiniCnn,
    probes: &Dataset,
    norm: &Normalization,
    dir: &Path,
) -> Result<()> {
    create_dir(dir)?;
    let x = norm.apply(probes.images())?;
    let (_, f3) = model.forward_backbone_detached(&x)?;
    let cams = compute_cam(&f3, &model.classifier, probes.labels())?;
    let s = x.shape();
    for (i, cam) in cams.iter().enumerate() {
        export_heatmap(&cam.resized(s.h, s.w)?, &dir.join(format!("probe_{i}.pgm")))?;
    }
    Ok(())
}

/// Trains one model and writes its run directory:
///
/// - `config.json`: the resolved config, including normalization constants
/// - `metrics.csv`: one row per epoch, flushed as it is produced
/// - `heatmaps/epoch_NNN/probe_I.pgm`: CAMs of the first 8 test images
/// - `model.ckpt`: final weights
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    run_experiment_with(config, |_| {})
}

/// [`run_experiment`], calling `on_epoch` after each epoch's row is written.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    mut on_epoch: impl FnMut(&RunRecord),
) -> Result<RunOutput> {
    let mut config = config.clone().resolved();
    config.validate()?;
    let (train, test) = load_datasets(&config.dataset)?;
    let norm = match &config.normalization {
        Some(n) => {
            n.validate(train.image_shape().c)?;
            n.clone()
        }
        None => Normalization::from_dataset(&train)?,
    };
    config.normalization = Some(norm.clone());

    let dir = config.out_dir.clone();
    create_dir(&dir)?;
    config.save(&dir.join(CONFIG_FILE))?;

    let shape = train.image_shape();
    let arch = Architecture {
        input_size: shape.h,
        ..Architecture::mini(shape.c, train.num_classes().max(test.num_classes()))
    };
    let model = MiniCnn::new(arch, config.seed)?;
    let mut trainer = Trainer::new(
        model,
        config.train.clone(),
        config.regularizer.clone(),
        config.replace_block.clone(),
        train.len(),
    )?
    .with_normalization(norm.clone())
    .with_augmentation(config.augment);

    let probe_idx: Vec<usize> = (0..PROBES.min(test.len())).collect();
    let probes = test.subset(&probe_idx)?;

    let metrics_path = dir.join(METRICS_FILE);
    let mut csv = csv::Writer::from_path(&metrics_path)?;
    let mut records = Vec::with_capacity(config.train.epochs);
    for epoch in 1..=config.train.epochs {
        let record = trainer.train_epoch(&train, &test)?;
        csv.serialize(&record)?;
        csv.flush().map_err(|e| Error::io(&metrics_path, e))?;
        on_epoch(&record);
        records.push(record);
        if epoch % config.eval_every == 0 || epoch == config.train.epochs {
            let hm = dir.join(HEATMAP_DIR).join(format!("epoch_{epoch:03}"));
            write_heatmaps(&trainer.model, &probes, &norm, &hm)?;
        }
    }
    checkpoint::save(&trainer.model, &dir.join(CHECKPOINT_FILE))?;
    Ok(RunOutput {
        dir,
        config,
        records,
    })
}
