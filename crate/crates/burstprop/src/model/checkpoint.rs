//! Model checkpoints: a directory of MBT1 tensors plus a JSON descriptor
//! carrying the graph layout, seed, epoch and optimizer settings.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::burst::{Activation, FeedbackInit};
use crate::error::{Error, Result};
use crate::loss_opt::{Adam, AdamConfig, AdamSlot};
use crate::model::{ArchitectureConfig, Model, Variant};
use crate::tensor::{read_mbt, write_mbt, Conv2dSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    pub kind: String,
    pub activation: Activation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conv_spec: Option<Conv2dSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feedback_init: Option<FeedbackInit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub variant: Variant,
    pub seed: u64,
    pub epoch: usize,
    pub architecture: ArchitectureConfig,
    pub adam: AdamConfig,
    pub adam_step: u64,
    pub layers: Vec<LayerDesc>,
    pub params: Vec<String>,
}

fn layer_descriptors(variant: Variant, arch: &ArchitectureConfig) -> Result<Vec<LayerDesc>> {
    let burst = variant == Variant::Mburst;
    let feedback = if burst { Some(arch.feedback_init) } else { None };
    let mut layers = Vec::new();
    let mut channel = |prefix: &str, stride: usize| -> Result<()> {
        let (s1, s2) = Conv2dSpec::new(arch.kernel, arch.kernel, stride, arch.padding, 1, arch.conv_channels)
            .and_then(|s1| {
                Ok((
                    s1,
                    Conv2dSpec::new(
                        arch.kernel,
                        arch.kernel,
                        stride,
                        arch.padding,
                        arch.conv_channels,
                        arch.conv_channels,
                    )?,
                ))
            })?;
        layers.push(LayerDesc {
            name: format!("{prefix}.conv1"),
            kind: "conv2d".into(),
            activation: Activation::Relu,
            conv_spec: Some(s1),
            feedback_init: feedback,
        });
        layers.push(LayerDesc {
            name: format!("{prefix}.conv2"),
            kind: "conv2d".into(),
            activation: Activation::Relu,
            conv_spec: Some(s2),
            feedback_init: feedback,
        });
        layers.push(LayerDesc {
            name: format!("{prefix}.embed"),
            kind: "dense".into(),
            activation: Activation::Relu,
            conv_spec: None,
            feedback_init: feedback,
        });
        Ok(())
    };
    channel("audio", arch.audio_stride)?;
    if variant != Variant::UnimodalBp {
        channel("visual", arch.visual_stride)?;
    }
    layers.push(LayerDesc {
        name: "head".into(),
        kind: "dense".into(),
        activation: Activation::Sigmoid,
        conv_spec: None,
        feedback_init: feedback,
    });
    Ok(layers)
}

pub fn save_checkpoint(model: &Model, opt: &Adam, epoch: usize, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let opt_dir = dir.join("opt");
    fs::create_dir_all(&opt_dir)?;

    let params = model.param_names();
    let mut adam_step = 0;
    for name in &params {
        let tensor = model.param(name).ok_or(Error::MissingState {
            op: "save_checkpoint",
            missing: "parameter",
        })?;
        write_mbt(&dir.join(format!("{name}.mbt")), tensor)?;
        if let Some(slot) = opt.slot(name) {
            write_mbt(&opt_dir.join(format!("{name}.m.mbt")), &slot.m)?;
            write_mbt(&opt_dir.join(format!("{name}.v.mbt")), &slot.v)?;
            adam_step = adam_step.max(slot.step);
        }
    }

    let desc = Checkpoint {
        version: 1,
        variant: model.variant,
        seed: model.seed,
        epoch,
        architecture: model.arch.clone(),
        adam: opt.cfg,
        adam_step,
        layers: layer_descriptors(model.variant, &model.arch)?,
        params,
    };
    let mut text = serde_json::to_string_pretty(&desc)?;
    text.push('\n');
    fs::write(dir.join("descriptor.json"), text)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, Adam, Checkpoint)> {
    let desc_path = dir.join("descriptor.json");
    if !desc_path.is_file() {
        return Err(Error::Config(format!(
            "no checkpoint descriptor at {}",
            desc_path.display()
        )));
    }
    let desc: Checkpoint = serde_json::from_str(&fs::read_to_string(&desc_path)?)?;
    let mut model = Model::init(desc.variant, desc.architecture.clone(), desc.seed)?;
    let mut opt = Adam::new(desc.adam);
    for name in &desc.params {
        let stored = read_mbt(&dir.join(format!("{name}.mbt")))?;
        let param = model.param_mut(name).ok_or_else(|| {
            Error::Format(format!("checkpoint names unknown parameter {name:?}"))
        })?;
        if stored.shape() != param.shape() {
            return Err(Error::Format(format!(
                "checkpoint tensor {name:?} has shape {:?}, expected {:?}",
                stored.shape(),
                param.shape()
            )));
        }
        *param = stored;

        let m_path = dir.join("opt").join(format!("{name}.m.mbt"));
        let v_path = dir.join("opt").join(format!("{name}.v.mbt"));
        if m_path.is_file() && v_path.is_file() {
            opt.restore_slot(
                name.clone(),
                AdamSlot {
                    m: read_mbt(&m_path)?,
                    v: read_mbt(&v_path)?,
                    step: desc.adam_step,
                },
            );
        }
    }
    Ok((model, opt, desc))
}
