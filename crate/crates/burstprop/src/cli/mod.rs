//! Command-line interface: `generate`, `train`, `compare`, `mask-dump`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
//! 4 numerical failure during training.

pub mod run;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::burst::BurstConfig;
use crate::data::{generate_dataset, Dataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::loss_opt::{AdamConfig, WeightedBceConfig};
use crate::model::{ArchitectureConfig, Variant};
use run::{compare, mask_dump, train_variant, TrainSettings};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_EPOCHS: usize = 40;
pub const DEFAULT_RUNS: usize = 4;
pub const DEFAULT_BATCH_SIZE: usize = 32;

/// Optional JSON configuration file; every section falls back to its default
/// and unknown keys are rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub runs: Option<usize>,
    pub batch_size: Option<usize>,
    pub variant: Option<String>,
    pub architecture: Option<ArchitectureConfig>,
    pub synthetic: Option<SyntheticConfig>,
    pub adam: Option<AdamConfig>,
    pub burst: Option<BurstConfig>,
    pub wbce: Option<WeightedBceConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }
}

#[derive(Parser)]
#[command(
    name = "mburst",
    about = "Burst-propagation speech-mask benchmark: dataset generation, training, comparison"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic audio-visual dataset with ideal binary masks.
    Generate {
        /// Output dataset directory (its parent must exist).
        #[arg(long)]
        out: PathBuf,
        /// JSON config file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one variant and write metrics.csv plus a checkpoint.
    Train {
        /// Dataset directory produced by `generate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// unimodal-bp, multimodal-bp or mburst.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Train all three variants over several seeds and tabulate the results.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Render ground-truth and predicted proxy masks as PGM images.
    MaskDump {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// `MBURST_OUT` overrides the output directory; nothing else is read from the
/// environment.
fn resolve_out(cli_out: PathBuf) -> PathBuf {
    std::env::var_os("MBURST_OUT")
        .map(PathBuf::from)
        .unwrap_or(cli_out)
}

fn resolve_variant(flag: Option<String>, file: &FileConfig) -> Result<Variant> {
    match flag.or_else(|| file.variant.clone()) {
        Some(name) => Variant::from_str(&name),
        None => Err(Error::Config(
            "no variant selected: pass --variant or set \"variant\" in the config".into(),
        )),
    }
}

fn train_settings(
    variant: Variant,
    file: &FileConfig,
    seed: Option<u64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
) -> TrainSettings {
    TrainSettings {
        variant,
        seed: seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        epochs: epochs.or(file.epochs).unwrap_or(DEFAULT_EPOCHS),
        batch_size: batch_size.or(file.batch_size).unwrap_or(DEFAULT_BATCH_SIZE),
        arch: file.architecture.clone().unwrap_or_default(),
        adam: file.adam.unwrap_or_default(),
        burst: file.burst.unwrap_or_default(),
        wbce: file.wbce.clone().unwrap_or_default(),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { out, config, seed } => {
            let file = FileConfig::load(config.as_deref())?;
            let cfg = file.synthetic.clone().unwrap_or_default();
            let seed = seed.or(file.seed).unwrap_or(DEFAULT_SEED);
            let out = resolve_out(out);
            let manifest = generate_dataset(&cfg, seed, &out)?;
            let count = |s: crate::data::Split| {
                manifest.samples.iter().filter(|m| m.split == s).count()
            };
            println!(
                "wrote {} samples to {} (train {} / test {} / proxy {}), pos_weight {:.3}",
                manifest.n_samples,
                out.display(),
                count(crate::data::Split::Train),
                count(crate::data::Split::Test),
                count(crate::data::Split::Proxy),
                manifest.pos_weight
            );
        }
        Command::Train {
            data,
            out,
            variant,
            config,
            seed,
            epochs,
            batch_size,
        } => {
            let file = FileConfig::load(config.as_deref())?;
            let variant = resolve_variant(variant, &file)?;
            let settings = train_settings(variant, &file, seed, epochs, batch_size);
            let out = resolve_out(out);
            let dataset = Dataset::open(&data)?;
            let outcome = train_variant(&dataset, &settings, Some(&out))?;
            println!(
                "trained {} for {} epochs (seed {})",
                variant.name(),
                settings.epochs,
                settings.seed
            );
            for split in ["train", "test"] {
                if let Some(r) = outcome.final_record(split) {
                    let auc = outcome
                        .auc
                        .get(split)
                        .map(|a| format!("{a:.3}"))
                        .unwrap_or_else(|| "n/a".into());
                    println!(
                        "  {split}: f1 {:.4}, accuracy {:.2}%, energy {:.4}, energy-auc {auc}",
                        r.f1, r.accuracy, r.energy_rate
                    );
                }
            }
            println!("metrics: {}", out.join("metrics.csv").display());
            println!("checkpoint: {}", out.join("checkpoint").display());
        }
        Command::Compare {
            data,
            out,
            config,
            seed,
            epochs,
            runs,
            batch_size,
        } => {
            let file = FileConfig::load(config.as_deref())?;
            let runs = runs.or(file.runs).unwrap_or(DEFAULT_RUNS);
            let settings = train_settings(Variant::Mburst, &file, seed, epochs, batch_size);
            let out = resolve_out(out);
            let dataset = Dataset::open(&data)?;
            let summary = compare(&dataset, &settings, runs, &out)?;
            print!("{}", summary.text_table());
            println!("artifacts: {}", out.display());
        }
        Command::MaskDump {
            data,
            checkpoint,
            out,
            config,
            seed,
        } => {
            let file = FileConfig::load(config.as_deref())?;
            let seed = seed.or(file.seed).unwrap_or(DEFAULT_SEED);
            let out = resolve_out(out);
            let dataset = Dataset::open(&data)?;
            let rows = mask_dump(&dataset, &checkpoint, seed, &out)?;
            println!(
                "wrote {rows}-row mask images to {} (mask_true.pgm, mask_pred.pgm)",
                out.display()
            );
        }
    }
    Ok(())
}

/// Binary entry point.
pub fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
