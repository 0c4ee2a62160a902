//! Synthetic audio-visual dataset with ground-truth ideal binary masks.
//!
//! Each sample couples a latent class (rendered as a "lip shape" image) with a
//! noisy log-power spectrogram; the target is the binary mask separating
//! speech-dominant from noise-dominant frequency bins of the current frame.

mod generate;

pub use generate::generate_dataset;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_mbt, write_mbt, Tensor};

/// Ideal-binary-mask parameters: the local criterion (dB) and the floor that
/// guards the power ratio against a vanishing noise denominator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IbmParams {
    pub lc_db: f64,
    pub eps_noise: f64,
}

impl Default for IbmParams {
    fn default() -> Self {
        IbmParams {
            lc_db: 5.0,
            eps_noise: 1e-12,
        }
    }
}

/// Per-element ideal binary mask over squared-magnitude (power) inputs:
/// 1 where `10*log10(speech / max(noise, eps_noise)) >= lc_db`, else 0.
/// The boundary is inclusive.
pub fn ibm(speech_power: &Tensor, noise_power: &Tensor, params: &IbmParams) -> Result<Tensor> {
    if speech_power.shape() != noise_power.shape() {
        return Err(Error::ShapeMismatch {
            op: "ibm",
            lhs: speech_power.shape().to_vec(),
            rhs: noise_power.shape().to_vec(),
        });
    }
    if speech_power.data().iter().any(|&v| v < 0.0)
        || noise_power.data().iter().any(|&v| v < 0.0)
    {
        return Err(Error::Domain("ibm: power inputs must be non-negative".into()));
    }
    let data = speech_power
        .data()
        .iter()
        .zip(noise_power.data())
        .map(|(&s, &n)| {
            let ratio_db = 10.0 * (s / n.max(params.eps_noise)).log10();
            if ratio_db >= params.lc_db {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(speech_power.shape().to_vec(), data)
}

/// Generator settings. Shapes follow the architecture presets; the mask covers
/// the current (last) audio frame, so `mask_bins` must equal the audio width.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub snr_db_set: Vec<f64>,
    pub split_fractions: [f64; 3],
    pub audio_shape: [usize; 3],
    pub visual_shape: [usize; 3],
    pub mask_bins: usize,
    pub lc_db: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_samples: 1000,
            snr_db_set: vec![-12.0, -6.0, 0.0, 6.0],
            split_fractions: [0.80, 0.15, 0.05],
            audio_shape: [1, 8, 64],
            visual_shape: [1, 24, 24],
            mask_bins: 64,
            lc_db: 5.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.split_fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        if self.split_fractions.iter().any(|&f| f < 0.0) {
            return Err(Error::Config("split fractions must be non-negative".into()));
        }
        if self.n_samples < 4 {
            return Err(Error::Config("n_samples must be at least 4".into()));
        }
        if self.snr_db_set.is_empty() {
            return Err(Error::Config("snr_db_set must be non-empty".into()));
        }
        if self.mask_bins != self.audio_shape[2] {
            return Err(Error::Config(format!(
                "mask_bins ({}) must equal the audio width ({})",
                self.mask_bins, self.audio_shape[2]
            )));
        }
        if self.audio_shape[0] != 1 || self.visual_shape[0] != 1 {
            return Err(Error::Config("audio/visual inputs are single-channel".into()));
        }
        Ok(())
    }

    /// Split sizes: train and test round down, proxy takes the remainder.
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let n = self.n_samples;
        let train = (n as f64 * self.split_fractions[0]).floor() as usize;
        let test = (n as f64 * self.split_fractions[1]).floor() as usize;
        (train, test, n - train - test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Proxy,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Proxy => "proxy",
        }
    }
}

/// Normalization statistics of the train-split audio, reused verbatim for the
/// other splits.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMeta {
    pub index: usize,
    pub class: usize,
    pub snr_db: f64,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub n_samples: usize,
    pub audio_shape: [usize; 3],
    pub visual_shape: [usize; 3],
    pub mask_bins: usize,
    pub snr_db_set: Vec<f64>,
    pub split_fractions: [f64; 3],
    pub lc_db: f64,
    pub pos_weight: f64,
    pub audio_norm: NormStats,
    pub samples: Vec<SampleMeta>,
}

/// Tensor kinds persisted per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Audio,
    Visual,
    Mask,
    Clean,
    Noise,
}

impl Component {
    pub fn suffix(&self) -> &'static str {
        match self {
            Component::Audio => "audio",
            Component::Visual => "visual",
            Component::Mask => "mask",
            Component::Clean => "clean",
            Component::Noise => "noise",
        }
    }
}

pub fn sample_path(root: &Path, index: usize, component: Component) -> PathBuf {
    root.join("samples")
        .join(format!("s{index:06}.{}.mbt", component.suffix()))
}

/// A batch of stacked samples.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    /// Noisy normalized log-power features, `[B, 1, Ha, Wa]`.
    pub audio: Tensor,
    /// Synthetic lip-configuration images, `[B, 1, Hv, Wv]`.
    pub visual: Tensor,
    /// Target ideal binary mask of the current frame, `[B, F]`.
    pub mask: Tensor,
    /// Clean power of the current frame, `[B, F]`; kept for oracle checks.
    pub clean: Tensor,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.audio.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copies the given rows into a new batch (training minibatches are
    /// gathered from a split loaded once into memory).
    pub fn gather(&self, rows: &[usize]) -> Result<SampleBatch> {
        let pick = |t: &Tensor| -> Result<Tensor> {
            let stride = t.numel() / t.shape()[0];
            let mut data = Vec::with_capacity(rows.len() * stride);
            for &r in rows {
                if r >= t.shape()[0] {
                    return Err(Error::Bounds {
                        index: r,
                        len: t.shape()[0],
                    });
                }
                data.extend_from_slice(&t.data()[r * stride..(r + 1) * stride]);
            }
            let mut shape = t.shape().to_vec();
            shape[0] = rows.len();
            Tensor::new(shape, data)
        };
        Ok(SampleBatch {
            audio: pick(&self.audio)?,
            visual: pick(&self.visual)?,
            mask: pick(&self.mask)?,
            clean: pick(&self.clean)?,
        })
    }
}

/// A dataset directory opened through its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    root: PathBuf,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Dataset> {
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.is_file() {
            return Err(Error::Config(format!(
                "no dataset manifest at {}",
                manifest_path.display()
            )));
        }
        let text = fs::read_to_string(&manifest_path)?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        Ok(Dataset {
            manifest,
            root: dir.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Global sample indices belonging to a split, ascending.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.manifest
            .samples
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.index)
            .collect()
    }

    pub fn component(&self, index: usize, component: Component) -> Result<Tensor> {
        if index >= self.manifest.n_samples {
            return Err(Error::Bounds {
                index,
                len: self.manifest.n_samples,
            });
        }
        read_mbt(&sample_path(&self.root, index, component))
    }

    /// Loads and stacks the samples at the given positions within a split.
    pub fn load_batch(&self, split: Split, positions: &[usize]) -> Result<SampleBatch> {
        let members = self.split_indices(split);
        let mut audio = Vec::new();
        let mut visual = Vec::new();
        let mut mask = Vec::new();
        let mut clean = Vec::new();
        for &pos in positions {
            let &index = members.get(pos).ok_or(Error::Bounds {
                index: pos,
                len: members.len(),
            })?;
            audio.push(self.component(index, Component::Audio)?);
            visual.push(self.component(index, Component::Visual)?);
            mask.push(self.component(index, Component::Mask)?);
            clean.push(self.component(index, Component::Clean)?);
        }
        let [_, ha, wa] = self.manifest.audio_shape;
        let [_, hv, wv] = self.manifest.visual_shape;
        let f = self.manifest.mask_bins;
        Ok(SampleBatch {
            audio: stack(&audio, &[1, ha, wa])?,
            visual: stack(&visual, &[1, hv, wv])?,
            mask: stack(&mask, &[f])?,
            clean: stack(&clean, &[f])?,
        })
    }

    /// Re-serializes one sample component to a new path; used to check that
    /// load/save is byte-stable.
    pub fn resave_component(&self, index: usize, component: Component, to: &Path) -> Result<()> {
        let tensor = self.component(index, component)?;
        write_mbt(to, &tensor)
    }
}

fn stack(tensors: &[Tensor], each_shape: &[usize]) -> Result<Tensor> {
    let mut data = Vec::new();
    for t in tensors {
        if t.shape() != each_shape {
            return Err(Error::ShapeMismatch {
                op: "stack",
                lhs: t.shape().to_vec(),
                rhs: each_shape.to_vec(),
            });
        }
        data.extend_from_slice(t.data());
    }
    let mut shape = vec![tensors.len()];
    shape.extend_from_slice(each_shape);
    Tensor::new(shape, data)
}
