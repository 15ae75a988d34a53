//! Experiment configs, run directories, comparisons and ablation presets.

mod compare;
mod run;
mod sweep;

pub use compare::{compare_runs, read_metrics, Comparison, Excluded, RunSummary};
pub use run::{
    load_datasets, run_experiment, run_experiment_with, RunOutput, CHECKPOINT_FILE, CONFIG_FILE,
    HEATMAP_DIR, METRICS_FILE,
};
pub use sweep::{preset_runs, Preset, SweepRun};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::nn::TrainConfig;
use crate::regularize::{RegularizerKind, ReplaceBlockConfig};

/// Where a run's images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Directory of CIFAR-10 binary batches.
    Cifar10 { dir: PathBuf },
    /// Directory of the four MNIST IDX files.
    Mnist { dir: PathBuf },
    /// Generated 3×32×32 Gaussian blobs.
    Synthetic {
        train: usize,
        test: usize,
        num_classes: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub source: DatasetSource,
    /// Class-balanced training subset size.
    #[serde(default)]
    pub train_subset: Option<usize>,
    #[serde(default)]
    pub test_subset: Option<usize>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            source: DatasetSource::Cifar10 {
                dir: PathBuf::from("data/cifar-10-batches-bin"),
            },
            train_subset: None,
            test_subset: None,
        }
    }
}

/// Everything needed to reproduce one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub regularizer: RegularizerKind,
    pub replace_block: ReplaceBlockConfig,
    pub out_dir: PathBuf,
    /// Run seed. Copied into `train.seed` on resolution.
    pub seed: u64,
    /// Heatmaps are written every `eval_every` epochs and after the last one.
    pub eval_every: usize,
    pub augment: bool,
    /// Filled in from the training split when absent.
    pub normalization: Option<Normalization>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            train: TrainConfig::default(),
            regularizer: RegularizerKind::None,
            replace_block: ReplaceBlockConfig::default(),
            out_dir: PathBuf::from("runs/default"),
            seed: 0,
            eval_every: 1,
            augment: true,
            normalization: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.regularizer.validate()?;
        self.replace_block.validate()?;
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be at least 1"));
        }
        if self.train.seed != self.seed {
            return Err(Error::invalid(format!(
                "train.seed {} disagrees with the run seed {}",
                self.train.seed, self.seed
            )));
        }
        Ok(())
    }

    /// Makes the run seed authoritative.
    pub fn resolved(mut self) -> Self {
        self.train.seed = self.seed;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}
