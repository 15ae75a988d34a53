//! `replaceblock`: train, compare and sweep ReplaceBlock experiments.

use std::path::{Path, PathBuf};
use std::process::{Child, Command};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use replaceblock::experiment::{
    compare_runs, preset_runs, run_experiment_with, DatasetSource, ExperimentConfig, Preset,
    CONFIG_FILE,
};

#[derive(Parser)]
#[command(
    name = "replaceblock",
    version,
    about = "Train and compare ReplaceBlock experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one model and write its run directory.
    Train(RunArgs),
    /// Summarize final and best test accuracy of completed runs.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        /// Also write the summary as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run an ablation preset: threshold-sweep, sampling-ablation,
    /// schedule-ablation or baseline-grid.
    Sweep {
        preset: String,
        #[command(flatten)]
        run: RunArgs,
        /// Train up to N of the preset's runs at once, each in its own process.
        #[arg(long, value_name = "N")]
        parallel: Option<usize>,
    },
}

/// Flags override the config file, which overrides built-in defaults.
#[derive(Args, Clone, Default)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory (CIFAR-10 binary batches or MNIST IDX files).
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Class-balanced training subset size.
    #[arg(long)]
    subset_size: Option<usize>,
    /// Class-balanced test subset size.
    #[arg(long)]
    test_subset_size: Option<usize>,
}

fn resolve(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(dir) = &args.dataset_dir {
        match &mut cfg.dataset.source {
            DatasetSource::Cifar10 { dir: d } | DatasetSource::Mnist { dir: d } => *d = dir.clone(),
            DatasetSource::Synthetic { .. } => {
                bail!("--dataset-dir does not apply to a synthetic dataset")
            }
        }
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(n) = args.subset_size {
        cfg.dataset.train_subset = Some(n);
    }
    if let Some(n) = args.test_subset_size {
        cfg.dataset.test_subset = Some(n);
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

fn train(cfg: &ExperimentConfig) -> Result<()> {
    eprintln!(
        "training {} -> {}",
        cfg.regularizer.label(),
        cfg.out_dir.display()
    );
    let out = run_experiment_with(cfg, |r| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  train {:6.2}%  test {:6.2}%  lr {:.5}",
            r.epoch, r.train_loss, r.train_top1, r.test_top1, r.lr
        );
    })
    .with_context(|| format!("run {}", cfg.out_dir.display()))?;
    if let Some(last) = out.records.last() {
        println!(
            "{}: final test top-1 {:.2}%",
            out.dir.display(),
            last.test_top1
        );
    }
    Ok(())
}

fn spawn_train(config_path: &Path) -> Result<Child> {
    let exe = std::env::current_exe().context("locating own executable")?;
    Command::new(exe)
        .arg("train")
        .arg("--config")
        .arg(config_path)
        .spawn()
        .context("spawning run")
}

fn sweep(preset: &str, args: &RunArgs, parallel: Option<usize>) -> Result<()> {
    let preset: Preset = preset.parse()?;
    let base = resolve(args)?;
    let runs = preset_runs(preset, &base);
    let dirs: Vec<PathBuf> = runs.iter().map(|r| r.config.out_dir.clone()).collect();
    match parallel {
        None | Some(0) | Some(1) => {
            for run in &runs {
                train(&run.config)?;
            }
        }
        Some(n) => {
            let mut failed = Vec::new();
            for chunk in runs.chunks(n) {
                let mut children = Vec::new();
                for run in chunk {
                    std::fs::create_dir_all(&run.config.out_dir)
                        .with_context(|| format!("creating {}", run.config.out_dir.display()))?;
                    let path = run.config.out_dir.join(CONFIG_FILE);
                    run.config.save(&path)?;
                    children.push((run.name.clone(), spawn_train(&path)?));
                }
                for (name, mut child) in children {
                    if !child.wait()?.success() {
                        failed.push(name);
                    }
                }
            }
            if !failed.is_empty() {
                bail!("runs failed: {}", failed.join(", "));
            }
        }
    }
    let cmp = compare_runs(&dirs)?;
    print!("{}", cmp.to_text());
    let csv_path = base.out_dir.join(preset.name()).join("summary.csv");
    std::fs::write(&csv_path, cmp.to_csv()?)
        .with_context(|| format!("writing {}", csv_path.display()))?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Cmd::Train(args) => train(&resolve(&args)?),
        Cmd::Compare { runs, csv } => {
            let cmp = compare_runs(&runs)?;
            print!("{}", cmp.to_text());
            if let Some(path) = csv {
                std::fs::write(&path, cmp.to_csv()?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if cmp.runs.is_empty() {
                bail!("no completed runs to compare");
            }
            Ok(())
        }
        Cmd::Sweep {
            preset,
            run,
            parallel,
        } => sweep(&preset, &run, parallel),
    }
}
