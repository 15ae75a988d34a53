use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{ExperimentConfig, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE};
use crate::error::{Error, Result};
use crate::nn::RunRecord;

pub fn read_metrics(path: &Path) -> Result<Vec<RunRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// One completed run in a comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub regularizer: String,
    pub epochs: usize,
    pub final_top1: f64,
    pub best_top1: f64,
    /// Differences to the first summarized run, in percentage points.
    pub delta_final: f64,
    pub delta_best: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Excluded {
    pub dir: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub runs: Vec<RunSummary>,
    pub excluded: Vec<Excluded>,
}

fn summarize(dir: &Path) -> std::result::Result<(String, usize, f64, f64), String> {
    let config = ExperimentConfig::load(&dir.join(CONFIG_FILE)).map_err(|e| e.to_string())?;
    let records = read_metrics(&dir.join(METRICS_FILE)).map_err(|e| e.to_string())?;
    let want = config.train.epochs;
    if records.len() != want {
        return Err(format!("{} of {want} epochs recorded", records.len()));
    }
    if !dir.join(CHECKPOINT_FILE).is_file() {
        return Err("no final checkpoint".into());
    }
    let last = records.last().ok_or("no epochs recorded")?;
    let best = records
        .iter()
        .map(|r| r.test_top1)
        .fold(f64::NEG_INFINITY, f64::max);
    let label = match config.regularizer {
        crate::regularize::RegularizerKind::ReplaceBlock => {
            let rb = &config.replace_block;
            format!(
                "replace_block(thr={},{:?},{:?},shuffle={})",
                rb.threshold_ratio, rb.sampling_mode, rb.schedule, rb.shuffle
            )
        }
        ref other => other.label(),
    };
    Ok((label, records.len(), last.test_top1, best))
}

/// Final and best test top-1 of each completed run, with deltas against the
/// first completed one. Incomplete or unreadable runs are listed in
/// `excluded`.
pub fn compare_runs(dirs: &[PathBuf]) -> Result<Comparison> {
    if dirs.len() < 2 {
        return Err(Error::invalid("compare needs at least two run directories"));
    }
    let mut runs: Vec<RunSummary> = Vec::new();
    let mut excluded = Vec::new();
    for dir in dirs {
        match summarize(dir) {
            Ok((regularizer, epochs, final_top1, best_top1)) => {
                let (df, db) = runs.first().map_or((0.0, 0.0), |r| {
                    (final_top1 - r.final_top1, best_top1 - r.best_top1)
                });
                runs.push(RunSummary {
                    dir: dir.clone(),
                    regularizer,
                    epochs,
                    final_top1,
                    best_top1,
                    delta_final: df,
                    delta_best: db,
                });
            }
            Err(reason) => excluded.push(Excluded {
                dir: dir.clone(),
                reason,
            }),
        }
    }
    Ok(Comparison { runs, excluded })
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<32} {:<44} {:>6} {:>9} {:>9} {:>8} {:>8}",
            "run", "regularizer", "epochs", "final", "best", "Δfinal", "Δbest"
        );
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{:<32} {:<44} {:>6} {:>9.2} {:>9.2} {:>+8.2} {:>+8.2}",
                r.dir.display(),
                r.regularizer,
                r.epochs,
                r.final_top1,
                r.best_top1,
                r.delta_final,
                r.delta_best
            );
        }
        for e in &self.excluded {
            let _ = writeln!(out, "excluded {}: {}", e.dir.display(), e.reason);
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "run",
            "regularizer",
            "epochs",
            "final_top1",
            "best_top1",
            "delta_final",
            "delta_best",
        ])?;
        for r in &self.runs {
            w.write_record([
                r.dir.display().to_string(),
                r.regularizer.clone(),
                r.epochs.to_string(),
                format!("{:.2}", r.final_top1),
                format!("{:.2}", r.best_top1),
                format!("{:+.2}", r.delta_final),
                format!("{:+.2}", r.delta_best),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
