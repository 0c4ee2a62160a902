//! Training, evaluation, comparison and mask-dump orchestration, callable as a
//! library (the binary is a thin wrapper, and the acceptance suite drives these
//! directly).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::burst::BurstConfig;
use crate::data::{Dataset, SampleBatch, Split};
use crate::error::{Error, Result};
use crate::loss_opt::{Adam, AdamConfig, WeightedBceConfig};
use crate::metrics::{auc_energy, records_to_csv, EpochRecord, MaskCounts};
use crate::model::{save_checkpoint, ArchitectureConfig, Model, Variant};
use crate::tensor::{Rng, Stream, Tensor};

/// Everything a single training run needs.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub variant: Variant,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub arch: ArchitectureConfig,
    pub adam: AdamConfig,
    pub burst: BurstConfig,
    pub wbce: WeightedBceConfig,
}

/// Per-run results: the epoch log and the energy AUC per split (present when
/// at least two epochs ran).
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub auc: BTreeMap<String, f64>,
}

impl TrainOutcome {
    pub fn split_records(&self, split: &str) -> Vec<&EpochRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn final_record(&self, split: &str) -> Option<&EpochRecord> {
        self.split_records(split).into_iter().last()
    }

    /// Mean energy rate over the last `n` epochs of a split.
    pub fn tail_energy(&self, split: &str, n: usize) -> Option<f64> {
        let records = self.split_records(split);
        if records.is_empty() {
            return None;
        }
        let tail = &records[records.len().saturating_sub(n)..];
        Some(tail.iter().map(|r| r.energy_rate).sum::<f64>() / tail.len() as f64)
    }
}

fn check_arch_against_manifest(arch: &ArchitectureConfig, dataset: &Dataset) -> Result<()> {
    let m = &dataset.manifest;
    if arch.audio_input != m.audio_shape
        || arch.visual_input != m.visual_shape
        || arch.mask_bins != m.mask_bins
    {
        return Err(Error::Config(format!(
            "architecture shapes (audio {:?}, visual {:?}, mask {}) do not match the dataset \
             (audio {:?}, visual {:?}, mask {})",
            arch.audio_input,
            arch.visual_input,
            arch.mask_bins,
            m.audio_shape,
            m.visual_shape,
            m.mask_bins
        )));
    }
    Ok(())
}

struct EnergyCounter {
    active: u64,
    total: u64,
}

impl EnergyCounter {
    fn new() -> Self {
        EnergyCounter { active: 0, total: 0 }
    }

    fn add(&mut self, rates: &[&Tensor]) {
        for t in rates {
            self.active += t.data().iter().filter(|&&v| v > 0.0).count() as u64;
            self.total += t.numel() as u64;
        }
    }

    fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.active as f64 / self.total as f64
        }
    }
}

/// Forward the whole split in chunks; pooled F1/accuracy over all cells and
/// the mean hidden activation rate.
fn evaluate(
    model: &mut Model,
    data: &SampleBatch,
    batch_size: usize,
) -> Result<(f64, f64, f64)> {
    let mut counts = MaskCounts::default();
    let mut energy = EnergyCounter::new();
    let n = data.len();
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let rows: Vec<usize> = (start..end).collect();
        let batch = data.gather(&rows)?;
        let pred = model.predict_mask(&batch, 0.5)?;
        counts.accumulate(&pred, &batch.mask)?;
        energy.add(&model.hidden_event_rates());
        start = end;
    }
    Ok((counts.f1(), counts.accuracy(), energy.rate()))
}

/// Trains one variant and returns the epoch log; when `out_dir` is given, the
/// metrics CSV and a final checkpoint are written there.
pub fn train_variant(
    dataset: &Dataset,
    settings: &TrainSettings,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    check_arch_against_manifest(&settings.arch, dataset)?;
    if settings.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    settings.burst.validate()?;

    let train_all = load_split(dataset, Split::Train)?;
    let test_all = load_split(dataset, Split::Test)?;
    let pos_weight = settings.wbce.resolve_pos_weight(dataset.manifest.pos_weight);
    if pos_weight <= 0.0 {
        return Err(Error::Config(format!(
            "pos_weight must be positive, got {pos_weight}"
        )));
    }

    let mut model = Model::init(settings.variant, settings.arch.clone(), settings.seed)?;
    let mut opt = Adam::new(settings.adam);
    let mut shuffle = Rng::seeded(settings.seed, Stream::Shuffle);

    let mut records = Vec::new();
    for epoch in 0..settings.epochs {
        let mut order: Vec<usize> = (0..train_all.len()).collect();
        shuffle.shuffle(&mut order);
        for chunk in order.chunks(settings.batch_size) {
            let batch = train_all.gather(chunk)?;
            let loss = model.learn_step(
                &batch,
                pos_weight,
                settings.wbce.eps_log,
                &settings.burst,
                &mut opt,
            )?;
            if !loss.is_finite() {
                return Err(Error::Numerical {
                    epoch,
                    message: format!("loss became {loss}"),
                });
            }
        }
        for (split, data) in [("train", &train_all), ("test", &test_all)] {
            let (f1, accuracy, energy_rate) = evaluate(&mut model, data, settings.batch_size)?;
            records.push(EpochRecord {
                epoch,
                split: split.to_string(),
                f1,
                accuracy,
                energy_rate,
            });
        }
    }

    let mut auc = BTreeMap::new();
    let outcome_records = records.clone();
    for split in ["train", "test"] {
        let rates: Vec<f64> = records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.energy_rate)
            .collect();
        if rates.len() >= 2 {
            auc.insert(split.to_string(), auc_energy(&rates)?);
        }
    }

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.csv"), records_to_csv(&records))?;
        save_checkpoint(&model, &opt, settings.epochs, &dir.join("checkpoint"))?;
    }
    Ok(TrainOutcome {
        records: outcome_records,
        auc,
    })
}

fn load_split(dataset: &Dataset, split: Split) -> Result<SampleBatch> {
    let positions: Vec<usize> = (0..dataset.split_indices(split).len()).collect();
    if positions.is_empty() {
        return Err(Error::Config(format!(
            "dataset has no {} samples",
            split.name()
        )));
    }
    dataset.load_batch(split, &positions)
}

/// Aggregated comparison results across seeds.
#[derive(Debug, Clone)]
pub struct CompareSummary {
    pub runs: usize,
    pub epochs: usize,
    /// Outcomes indexed by (variant, run).
    pub outcomes: BTreeMap<String, Vec<TrainOutcome>>,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd::default();
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / values.len() as f64;
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

impl CompareSummary {
    fn finals(&self, variant: Variant, split: &str, pick: impl Fn(&EpochRecord) -> f64) -> Vec<f64> {
        self.outcomes[variant.name()]
            .iter()
            .filter_map(|o| o.final_record(split).map(&pick))
            .collect()
    }

    pub fn final_f1(&self, variant: Variant, split: &str) -> MeanStd {
        mean_std(&self.finals(variant, split, |r| r.f1))
    }

    pub fn final_accuracy(&self, variant: Variant, split: &str) -> MeanStd {
        mean_std(&self.finals(variant, split, |r| r.accuracy))
    }

    pub fn energy_auc(&self, variant: Variant, split: &str) -> MeanStd {
        let values: Vec<f64> = self.outcomes[variant.name()]
            .iter()
            .filter_map(|o| o.auc.get(split).copied())
            .collect();
        mean_std(&values)
    }

    pub fn tail_energy(&self, variant: Variant, split: &str, n: usize) -> MeanStd {
        let values: Vec<f64> = self.outcomes[variant.name()]
            .iter()
            .filter_map(|o| o.tail_energy(split, n))
            .collect();
        mean_std(&values)
    }

    /// Aligned text table in the shape of the result tables: one block of
    /// rows per split, one column per variant.
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<7} {:<10} {:>22} {:>22} {:>22}",
            "split", "metric", "unimodal-bp", "multimodal-bp", "mburst"
        );
        for split in ["train", "test"] {
            for (label, get) in [
                ("f1", &(|v| self.final_f1(v, split)) as &dyn Fn(Variant) -> MeanStd),
                ("accuracy", &|v| self.final_accuracy(v, split)),
                ("energy-auc", &|v| self.energy_auc(v, split)),
            ] {
                let cells: Vec<String> = Variant::ALL
                    .iter()
                    .map(|&v| {
                        let ms = get(v);
                        format!("{:.4} ± {:.4}", ms.mean, ms.std)
                    })
                    .collect();
                let _ = writeln!(
                    out,
                    "{:<7} {:<10} {:>22} {:>22} {:>22}",
                    split, label, cells[0], cells[1], cells[2]
                );
            }
        }
        out
    }
}

/// Trains all three variants over `runs` seeds (seed, seed+1, ...) on one
/// dataset and writes per-run CSVs, the two comparison CSVs, and summary.json.
pub fn compare(
    dataset: &Dataset,
    base: &TrainSettings,
    runs: usize,
    out_dir: &Path,
) -> Result<CompareSummary> {
    if runs == 0 {
        return Err(Error::Config("runs must be positive".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut outcomes: BTreeMap<String, Vec<TrainOutcome>> = BTreeMap::new();
    for variant in Variant::ALL {
        for run in 0..runs {
            let settings = TrainSettings {
                variant,
                seed: base.seed + run as u64,
                ..base.clone()
            };
            let outcome = train_variant(dataset, &settings, None)?;
            fs::write(
                out_dir.join(format!("metrics_{}_run{run}.csv", variant.name())),
                records_to_csv(&outcome.records),
            )?;
            outcomes.entry(variant.name().to_string()).or_default().push(outcome);
        }
    }
    let summary = CompareSummary {
        runs,
        epochs: base.epochs,
        outcomes,
    };

    // Table-I-shaped CSV: rows are (split, metric), columns are variants.
    let mut metrics_csv = String::from("split,metric,unimodal-bp,multimodal-bp,mburst\n");
    for split in ["train", "test"] {
        for (metric, get) in [
            ("f1", &(|v| summary.final_f1(v, split)) as &dyn Fn(Variant) -> MeanStd),
            ("accuracy", &|v| summary.final_accuracy(v, split)),
        ] {
            let cells: Vec<String> = Variant::ALL
                .iter()
                .map(|&v| {
                    let ms = get(v);
                    format!("{:.6} ± {:.6}", ms.mean, ms.std)
                })
                .collect();
            let _ = writeln!(metrics_csv, "{split},{metric},{}", cells.join(","));
        }
    }
    fs::write(out_dir.join("comparison_metrics.csv"), metrics_csv)?;

    // Table-II-shaped CSV: energy AUC per split.
    let mut energy_csv = String::from("split,unimodal-bp,multimodal-bp,mburst\n");
    for split in ["train", "test"] {
        let cells: Vec<String> = Variant::ALL
            .iter()
            .map(|&v| {
                let ms = summary.energy_auc(v, split);
                format!("{:.6} ± {:.6}", ms.mean, ms.std)
            })
            .collect();
        let _ = writeln!(energy_csv, "{split},{}", cells.join(","));
    }
    fs::write(out_dir.join("comparison_energy.csv"), energy_csv)?;

    #[derive(Serialize)]
    struct SplitSummary {
        f1: MeanStd,
        accuracy: MeanStd,
        energy_auc: MeanStd,
    }
    let mut variants = BTreeMap::new();
    for variant in Variant::ALL {
        let mut per_split = BTreeMap::new();
        for split in ["train", "test"] {
            per_split.insert(
                split,
                SplitSummary {
                    f1: summary.final_f1(variant, split),
                    accuracy: summary.final_accuracy(variant, split),
                    energy_auc: summary.energy_auc(variant, split),
                },
            );
        }
        variants.insert(variant.name(), per_split);
    }
    #[derive(Serialize)]
    struct SummaryJson<'a> {
        runs: usize,
        epochs: usize,
        variants: BTreeMap<&'a str, BTreeMap<&'a str, SplitSummary>>,
    }
    let mut text = serde_json::to_string_pretty(&SummaryJson {
        runs,
        epochs: base.epochs,
        variants,
    })?;
    text.push('\n');
    fs::write(out_dir.join("summary.json"), text)?;
    Ok(summary)
}

/// Binary PGM (P5, maxval 255).
pub fn write_pgm(path: &Path, rows: usize, cols: usize, values01: &[f64]) -> Result<()> {
    if values01.len() != rows * cols {
        return Err(Error::ShapeMismatch {
            op: "write_pgm",
            lhs: vec![values01.len()],
            rhs: vec![rows, cols],
        });
    }
    let mut bytes = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    bytes.extend(values01.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes)?;
    Ok(())
}

/// Renders ground-truth and predicted masks over a window of consecutive
/// proxy samples (one image row per sample). Returns the number of rows.
pub fn mask_dump(
    dataset: &Dataset,
    checkpoint_dir: &Path,
    seed: u64,
    out_dir: &Path,
) -> Result<usize> {
    let (mut model, _, _) = crate::model::load_checkpoint(checkpoint_dir)?;
    check_arch_against_manifest(&model.arch, dataset)?;
    let proxy = dataset.split_indices(Split::Proxy);
    if proxy.is_empty() {
        return Err(Error::Config("dataset has no proxy samples".into()));
    }
    let rows = proxy.len().min(150);
    let start = Rng::seeded(seed, Stream::Shuffle).below(proxy.len() - rows + 1);
    let positions: Vec<usize> = (start..start + rows).collect();
    let batch = dataset.load_batch(Split::Proxy, &positions)?;
    let pred = model.predict_mask(&batch, 0.5)?;

    fs::create_dir_all(out_dir)?;
    let cols = dataset.manifest.mask_bins;
    write_pgm(&out_dir.join("mask_true.pgm"), rows, cols, batch.mask.data())?;
    write_pgm(&out_dir.join("mask_pred.pgm"), rows, cols, pred.data())?;
    Ok(rows)
}
