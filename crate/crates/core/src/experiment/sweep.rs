use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::error::{Error, Result};
use crate::mask::SamplingMode;
use crate::regularize::{RegularizerKind, Schedule};

/// Ablation presets. Each expands to sibling runs under the base output
/// directory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// ReplaceBlock with TC-DM thresholds 0.05, 0.20 and 0.60.
    ThresholdSweep,
    /// RR-SM against uniform seed sampling.
    SamplingAblation,
    /// Every step against every other step.
    ScheduleAblation,
    /// No regularizer, each baseline, and ReplaceBlock.
    BaselineGrid,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::ThresholdSweep,
        Preset::SamplingAblation,
        Preset::ScheduleAblation,
        Preset::BaselineGrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::ThresholdSweep => "threshold-sweep",
            Preset::SamplingAblation => "sampling-ablation",
            Preset::ScheduleAblation => "schedule-ablation",
            Preset::BaselineGrid => "baseline-grid",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown preset {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub name: String,
    pub config: ExperimentConfig,
}

/// The runs of `preset`, each a copy of `base` writing to
/// `base.out_dir/<preset>/<name>`.
pub fn preset_runs(preset: Preset, base: &ExperimentConfig) -> Vec<SweepRun> {
    let rb = |f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = base.clone();
        c.regularizer = RegularizerKind::ReplaceBlock;
        f(&mut c);
        c
    };
    let with = |kind: RegularizerKind| ExperimentConfig {
        regularizer: kind,
        ..base.clone()
    };
    let runs: Vec<(String, ExperimentConfig)> = match preset {
        Preset::ThresholdSweep => [0.05f32, 0.20, 0.60]
            .into_iter()
            .map(|t| {
                (
                    format!("threshold-{t:.2}"),
                    rb(&|c| c.replace_block.threshold_ratio = t),
                )
            })
            .collect(),
        Preset::SamplingAblation => [
            ("rr-sm", SamplingMode::RrSm),
            ("uniform", SamplingMode::Uniform),
        ]
        .into_iter()
        .map(|(n, m)| (n.to_string(), rb(&|c| c.replace_block.sampling_mode = m)))
        .collect(),
        Preset::ScheduleAblation => [
            ("all-time", Schedule::AllTime),
            ("alternate", Schedule::Alternate),
        ]
        .into_iter()
        .map(|(n, s)| (n.to_string(), rb(&|c| c.replace_block.schedule = s)))
        .collect(),
        Preset::BaselineGrid => vec![
            ("none".into(), with(RegularizerKind::None)),
            (
                "dropout".into(),
                with(RegularizerKind::Dropout { keep_prob: 0.7 }),
            ),
            (
                "spatial-dropout".into(),
                with(RegularizerKind::SpatialDropout { keep_prob: 0.9 }),
            ),
            (
                "drop-block".into(),
                with(RegularizerKind::DropBlock {
                    keep_prob: 0.9,
                    block_size: 3,
                }),
            ),
            ("cutout".into(), with(RegularizerKind::Cutout { size: 8 })),
            ("replace-block".into(), rb(&|_| {})),
        ],
    };
    runs.into_iter()
        .map(|(name, mut config)| {
            config.out_dir = base.out_dir.join(preset.name()).join(&name);
            SweepRun { name, config }
        })
        .collect()
}
