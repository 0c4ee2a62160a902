//! Mask-reconstruction metrics (F1, accuracy), the firing-rate energy metric,
//! and its area under the curve across epochs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn ensure_binary(t: &Tensor, op: &'static str) -> Result<()> {
    if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Domain(format!("{op}: mask values must be 0 or 1")));
    }
    Ok(())
}

fn ensure_same_shape(a: &Tensor, b: &Tensor, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Confusion counts over binary masks; accumulate batches, then read the
/// aggregate metrics.
#[derive(Debug, Clone, Copy, Default)]
pub struct MaskCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub matches: u64,
    pub total: u64,
}

impl MaskCounts {
    pub fn accumulate(&mut self, pred: &Tensor, truth: &Tensor) -> Result<()> {
        ensure_same_shape(pred, truth, "mask_counts")?;
        ensure_binary(pred, "mask_counts")?;
        ensure_binary(truth, "mask_counts")?;
        for (&p, &t) in pred.data().iter().zip(truth.data()) {
            match (p == 1.0, t == 1.0) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => {}
            }
            if p == t {
                self.matches += 1;
            }
            self.total += 1;
        }
        Ok(())
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    /// Elementwise match rate in percent.
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.matches as f64 / self.total as f64
        }
    }
}

/// F1 score with the mask value 1 as the positive class; 0 when the
/// denominator vanishes.
pub fn f1_score(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    let mut counts = MaskCounts::default();
    counts.accumulate(pred, truth)?;
    Ok(counts.f1())
}

/// Elementwise match rate in percent.
pub fn accuracy(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    let mut counts = MaskCounts::default();
    counts.accumulate(pred, truth)?;
    Ok(counts.accuracy())
}

/// Fraction of strictly positive units across the given post-activation
/// event-rate tensors (hidden layers only by convention; the caller picks).
pub fn energy_rate(activations: &[&Tensor]) -> Result<f64> {
    if activations.is_empty() {
        return Err(Error::Domain("energy_rate: empty layer list".into()));
    }
    let mut active = 0u64;
    let mut total = 0u64;
    for t in activations {
        active += t.data().iter().filter(|&&v| v > 0.0).count() as u64;
        total += t.numel() as u64;
    }
    Ok(active as f64 / total as f64)
}

/// Unnormalized trapezoidal integral of the per-epoch energy rates over the
/// epoch index.
pub fn auc_energy(rates: &[f64]) -> Result<f64> {
    if rates.len() < 2 {
        return Err(Error::Domain(format!(
            "auc_energy: need at least 2 epochs, got {}",
            rates.len()
        )));
    }
    let mut auc = 0.0;
    for pair in rates.windows(2) {
        auc += 0.5 * (pair[0] + pair[1]);
    }
    Ok(auc)
}

/// One row of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub f1: f64,
    pub accuracy: f64,
    pub energy_rate: f64,
}

pub const CSV_HEADER: &str = "epoch,split,f1,accuracy,energy_rate";

/// Renders records as CSV, fixed six-decimal formatting so repeated runs are
/// byte-identical.
pub fn records_to_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6}",
            r.epoch, r.split, r.f1, r.accuracy, r.energy_rate
        );
    }
    out
}

/// Parses a metrics CSV produced by [`records_to_csv`].
pub fn records_from_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "metrics csv: bad header {other:?}"
            )))
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Format(format!("metrics csv: bad row {i}")));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Format(format!("metrics csv: bad number {s:?}")))
        };
        records.push(EpochRecord {
            epoch: fields[0]
                .parse()
                .map_err(|_| Error::Format(format!("metrics csv: bad epoch {:?}", fields[0])))?,
            split: fields[1].to_string(),
            f1: parse(fields[2])?,
            accuracy: parse(fields[3])?,
            energy_rate: parse(fields[4])?,
        });
    }
    Ok(records)
}
