//! The mask-reconstruction architectures: two convolutional channels (audio,
//! visual) feeding dense embeddings that are concatenated into a sigmoid head,
//! in a backprop flavor and a burst-propagation flavor.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use serde::{Deserialize, Serialize};

use crate::baseline::{BpConv2dLayer, BpDenseLayer};
use crate::burst::{Activation, BurstConfig, BurstConv2dLayer, BurstDenseLayer, FeedbackInit};
use crate::data::SampleBatch;
use crate::error::{Error, Result};
use crate::loss_opt::{wbce_grad, wbce_loss, Adam};
use crate::tensor::{active_fraction, Conv2dSpec, Rng, Stream, Tensor};

/// Shapes and sizes of the network. The default is the small "desk" preset;
/// [`ArchitectureConfig::paper_scale`] gives the full-size variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchitectureConfig {
    pub audio_input: [usize; 3],
    pub visual_input: [usize; 3],
    pub conv_channels: usize,
    pub audio_stride: usize,
    pub visual_stride: usize,
    pub kernel: usize,
    pub padding: usize,
    pub embed_units: usize,
    pub mask_bins: usize,
    pub feedback_init: FeedbackInit,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            audio_input: [1, 8, 64],
            visual_input: [1, 24, 24],
            conv_channels: 8,
            audio_stride: 1,
            visual_stride: 2,
            kernel: 3,
            padding: 1,
            embed_units: 64,
            mask_bins: 64,
            feedback_init: FeedbackInit::Symmetric,
        }
    }
}

impl ArchitectureConfig {
    /// Full-size preset: 8x500 audio context, 50x92 lip crops, 32 channels and
    /// 256-unit embeddings.
    pub fn paper_scale() -> Self {
        ArchitectureConfig {
            audio_input: [1, 8, 500],
            visual_input: [1, 50, 92],
            conv_channels: 32,
            audio_stride: 1,
            visual_stride: 2,
            kernel: 3,
            padding: 1,
            embed_units: 256,
            mask_bins: 500,
            feedback_init: FeedbackInit::Symmetric,
        }
    }

    fn conv_specs(&self, stride: usize) -> Result<(Conv2dSpec, Conv2dSpec)> {
        let first = Conv2dSpec::new(
            self.kernel,
            self.kernel,
            stride,
            self.padding,
            1,
            self.conv_channels,
        )?;
        let second = Conv2dSpec::new(
            self.kernel,
            self.kernel,
            stride,
            self.padding,
            self.conv_channels,
            self.conv_channels,
        )?;
        Ok((first, second))
    }

    /// Spatial shape after the two convolutions of a channel.
    fn stack_shape(&self, input: [usize; 3], stride: usize) -> Result<(usize, usize)> {
        let (s1, s2) = self.conv_specs(stride)?;
        let (h1, w1) = s1.out_hw(input[1], input[2])?;
        s2.out_hw(h1, w1)
    }

    pub fn validate(&self) -> Result<()> {
        for (input, stride) in [
            (self.audio_input, self.audio_stride),
            (self.visual_input, self.visual_stride),
        ] {
            if input[0] != 1 {
                return Err(Error::Config("channel inputs are single-channel".into()));
            }
            let (h, w) = self.stack_shape(input, stride)?;
            if h == 0 || w == 0 {
                return Err(Error::Config("conv stack collapses the input".into()));
            }
        }
        if self.embed_units == 0 || self.mask_bins == 0 || self.conv_channels == 0 {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        Ok(())
    }
}

/// The three trainable architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "unimodal-bp")]
    UnimodalBp,
    #[serde(rename = "multimodal-bp")]
    MultimodalBp,
    #[serde(rename = "mburst")]
    Mburst,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::UnimodalBp, Variant::MultimodalBp, Variant::Mburst];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::UnimodalBp => "unimodal-bp",
            Variant::MultimodalBp => "multimodal-bp",
            Variant::Mburst => "mburst",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "unimodal-bp" => Ok(Variant::UnimodalBp),
            "multimodal-bp" => Ok(Variant::MultimodalBp),
            "mburst" => Ok(Variant::Mburst),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected unimodal-bp, multimodal-bp or mburst)"
            ))),
        }
    }
}

struct BpChannel {
    conv1: BpConv2dLayer,
    conv2: BpConv2dLayer,
    embed: BpDenseLayer,
    map_shape: (usize, usize, usize), // (C, H, W) after conv2
}

impl BpChannel {
    fn init(arch: &ArchitectureConfig, input: [usize; 3], stride: usize, rng: &mut Rng) -> Result<Self> {
        let (s1, s2) = arch.conv_specs(stride)?;
        let (h, w) = arch.stack_shape(input, stride)?;
        let flat = arch.conv_channels * h * w;
        Ok(BpChannel {
            conv1: BpConv2dLayer::init(s1, Activation::Relu, rng),
            conv2: BpConv2dLayer::init(s2, Activation::Relu, rng),
            embed: BpDenseLayer::init(arch.embed_units, flat, Activation::Relu, rng),
            map_shape: (arch.conv_channels, h, w),
        })
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let e1 = self.conv1.forward(input)?;
        let e2 = self.conv2.forward(&e1)?;
        let batch = e2.shape()[0];
        let flat = e2.reshape(&[batch, e2.numel() / batch])?;
        self.embed.forward(&flat)
    }

    /// Chain rule back through embed, conv2, conv1; returns named weight grads.
    fn backward(&mut self, embed_grad: &Tensor, prefix: &str) -> Result<Vec<(String, Tensor)>> {
        let (flat_grad, embed_wg) = self.embed.backward(embed_grad)?;
        let batch = flat_grad.shape()[0];
        let (c, h, w) = self.map_shape;
        let map_grad = flat_grad.reshape(&[batch, c, h, w])?;
        let (conv1_out_grad, conv2_wg) = self.conv2.backward(&map_grad)?;
        let (_, conv1_wg) = self.conv1.backward(&conv1_out_grad)?;
        Ok(vec![
            (format!("{prefix}.conv1.w"), conv1_wg),
            (format!("{prefix}.conv2.w"), conv2_wg),
            (format!("{prefix}.embed.w"), embed_wg),
        ])
    }

    fn event_rates(&self) -> Vec<&Tensor> {
        [
            self.conv1.event_rate(),
            self.conv2.event_rate(),
            self.embed.event_rate(),
        ]
        .into_iter()
        .flatten()
        .collect()
    }
}

struct BurstChannel {
    conv1: BurstConv2dLayer,
    conv2: BurstConv2dLayer,
    embed: BurstDenseLayer,
    map_shape: (usize, usize, usize),
}

impl BurstChannel {
    fn init(arch: &ArchitectureConfig, input: [usize; 3], stride: usize, rng: &mut Rng) -> Result<Self> {
        let (s1, s2) = arch.conv_specs(stride)?;
        let (h, w) = arch.stack_shape(input, stride)?;
        let flat = arch.conv_channels * h * w;
        Ok(BurstChannel {
            conv1: BurstConv2dLayer::init(s1, Activation::Relu, arch.feedback_init, rng),
            conv2: BurstConv2dLayer::init(s2, Activation::Relu, arch.feedback_init, rng),
            embed: BurstDenseLayer::init(
                arch.embed_units,
                flat,
                Activation::Relu,
                arch.feedback_init,
                rng,
            ),
            map_shape: (arch.conv_channels, h, w),
        })
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let e1 = self.conv1.forward(input)?;
        let e2 = self.conv2.forward(&e1)?;
        let batch = e2.shape()[0];
        let flat = e2.reshape(&[batch, e2.numel() / batch])?;
        self.embed.forward(&flat)
    }

    /// Burst feedback through the channel: the embedding receives the head's
    /// projected burst pair, the conv layers receive their downstream layer's
    /// projection in turn. Returns named pseudo-gradients.
    fn feedback(
        &mut self,
        fb: &Tensor,
        fb_bar: &Tensor,
        cfg: &BurstConfig,
        prefix: &str,
    ) -> Result<Vec<(String, Tensor)>> {
        self.embed.dendritic_potentials(fb, fb_bar, cfg)?;
        self.embed.hidden_burst_prob(cfg)?;
        self.embed.burst_rates()?;
        let (flat, flat_bar) = self.embed.project_feedback()?;
        let batch = flat.shape()[0];
        let (c, h, w) = self.map_shape;
        let map = flat.reshape(&[batch, c, h, w])?;
        let map_bar = flat_bar.reshape(&[batch, c, h, w])?;

        self.conv2.dendritic_potentials(&map, &map_bar, cfg)?;
        self.conv2.hidden_burst_prob(cfg)?;
        self.conv2.burst_rates()?;
        let (down, down_bar) = self.conv2.project_feedback()?;

        self.conv1.dendritic_potentials(&down, &down_bar, cfg)?;
        self.conv1.hidden_burst_prob(cfg)?;
        self.conv1.burst_rates()?;

        let (c1w, c1y) = self.conv1.weight_update()?;
        let (c2w, c2y) = self.conv2.weight_update()?;
        let (ew, ey) = self.embed.weight_update()?;
        Ok(vec![
            (format!("{prefix}.conv1.w"), c1w),
            (format!("{prefix}.conv1.y"), c1y),
            (format!("{prefix}.conv2.w"), c2w),
            (format!("{prefix}.conv2.y"), c2y),
            (format!("{prefix}.embed.w"), ew),
            (format!("{prefix}.embed.y"), ey),
        ])
    }

    fn event_rates(&self) -> Vec<&Tensor> {
        [
            self.conv1.event_rate(),
            self.conv2.event_rate(),
            self.embed.event_rate(),
        ]
        .into_iter()
        .flatten()
        .collect()
    }
}

enum Net {
    Bp {
        audio: BpChannel,
        visual: Option<BpChannel>,
        head: BpDenseLayer,
    },
    Burst {
        audio: BurstChannel,
        visual: BurstChannel,
        head: BurstDenseLayer,
    },
}

/// A trainable model instance: variant tag, architecture, and the layer stack.
pub struct Model {
    pub variant: Variant,
    pub arch: ArchitectureConfig,
    pub seed: u64,
    net: Net,
}

impl Model {
    /// Builds a freshly initialized model. Weight draws consume the
    /// weight stream of `seed` in a fixed layer order.
    pub fn init(variant: Variant, arch: ArchitectureConfig, seed: u64) -> Result<Model> {
        arch.validate()?;
        let mut rng = Rng::seeded(seed, Stream::Weights);
        let net = match variant {
            Variant::UnimodalBp => {
                let audio = BpChannel::init(&arch, arch.audio_input, arch.audio_stride, &mut rng)?;
                let head = BpDenseLayer::init(
                    arch.mask_bins,
                    arch.embed_units,
                    Activation::Sigmoid,
                    &mut rng,
                );
                Net::Bp {
                    audio,
                    visual: None,
                    head,
                }
            }
            Variant::MultimodalBp => {
                let audio = BpChannel::init(&arch, arch.audio_input, arch.audio_stride, &mut rng)?;
                let visual =
                    BpChannel::init(&arch, arch.visual_input, arch.visual_stride, &mut rng)?;
                let head = BpDenseLayer::init(
                    arch.mask_bins,
                    2 * arch.embed_units,
                    Activation::Sigmoid,
                    &mut rng,
                );
                Net::Bp {
                    audio,
                    visual: Some(visual),
                    head,
                }
            }
            Variant::Mburst => {
                let audio =
                    BurstChannel::init(&arch, arch.audio_input, arch.audio_stride, &mut rng)?;
                let visual =
                    BurstChannel::init(&arch, arch.visual_input, arch.visual_stride, &mut rng)?;
                let head = BurstDenseLayer::init(
                    arch.mask_bins,
                    2 * arch.embed_units,
                    Activation::Sigmoid,
                    arch.feedback_init,
                    &mut rng,
                );
                Net::Burst {
                    audio,
                    visual,
                    head,
                }
            }
        };
        Ok(Model {
            variant,
            arch,
            seed,
            net,
        })
    }

    fn check_inputs(&self, batch: &SampleBatch) -> Result<()> {
        let [b, ca, ha, wa] = batch.audio.dims4("audio input")?;
        let [ea_c, ea_h, ea_w] = self.arch.audio_input;
        if ca != ea_c || ha != ea_h || wa != ea_w {
            return Err(Error::ShapeMismatch {
                op: "audio input",
                lhs: batch.audio.shape().to_vec(),
                rhs: vec![b, ea_c, ea_h, ea_w],
            });
        }
        if self.variant != Variant::UnimodalBp {
            let [bv, cv, hv, wv] = batch.visual.dims4("visual input")?;
            let [ev_c, ev_h, ev_w] = self.arch.visual_input;
            if bv != b || cv != ev_c || hv != ev_h || wv != ev_w {
                return Err(Error::ShapeMismatch {
                    op: "visual input",
                    lhs: batch.visual.shape().to_vec(),
                    rhs: vec![b, ev_c, ev_h, ev_w],
                });
            }
        }
        Ok(())
    }

    /// Full forward pass; returns sigmoid mask probabilities `[B, F]` and
    /// leaves per-layer event rates cached for the learning pass and the
    /// energy metric.
    pub fn forward_pass(&mut self, batch: &SampleBatch) -> Result<Tensor> {
        self.check_inputs(batch)?;
        match &mut self.net {
            Net::Bp {
                audio,
                visual,
                head,
            } => {
                let audio_emb = audio.forward(&batch.audio)?;
                let head_in = match visual {
                    Some(v) => Tensor::concat_cols(&audio_emb, &v.forward(&batch.visual)?)?,
                    None => audio_emb,
                };
                head.forward(&head_in)
            }
            Net::Burst {
                audio,
                visual,
                head,
            } => {
                let audio_emb = audio.forward(&batch.audio)?;
                let visual_emb = visual.forward(&batch.visual)?;
                let head_in = Tensor::concat_cols(&audio_emb, &visual_emb)?;
                head.forward(&head_in)
            }
        }
    }

    /// Learning-signal propagation from a head loss derivative down to named
    /// per-parameter gradients (backprop) or pseudo-gradients (burst), without
    /// touching any parameter. Requires a prior [`Model::forward_pass`].
    pub fn feedback_gradients(
        &mut self,
        loss_grad: &Tensor,
        burst_cfg: &BurstConfig,
    ) -> Result<Vec<(String, Tensor)>> {
        let embed_units = self.arch.embed_units;
        let grad = loss_grad;
        match &mut self.net {
            Net::Bp {
                audio,
                visual,
                head,
            } => {
                let (head_in_grad, head_wg) = head.backward(grad)?;
                let mut updates = vec![("head.w".to_string(), head_wg)];
                match visual {
                    Some(v) => {
                        let (audio_grad, visual_grad) = head_in_grad.split_cols(embed_units)?;
                        updates.extend(audio.backward(&audio_grad, "audio")?);
                        updates.extend(v.backward(&visual_grad, "visual")?);
                    }
                    None => {
                        updates.extend(audio.backward(&head_in_grad, "audio")?);
                    }
                }
                Ok(updates)
            }
            Net::Burst {
                audio,
                visual,
                head,
            } => {
                head.output_burst_prob(grad, burst_cfg)?;
                head.burst_rates()?;
                let (fb, fb_bar) = head.project_feedback()?;
                // the dendritic drive splits positionally at the concat boundary
                let (fb_a, fb_v) = fb.split_cols(embed_units)?;
                let (fb_a_bar, fb_v_bar) = fb_bar.split_cols(embed_units)?;
                let (head_w, head_y) = head.weight_update()?;
                let mut updates = vec![
                    ("head.w".to_string(), head_w),
                    ("head.y".to_string(), head_y),
                ];
                updates.extend(audio.feedback(&fb_a, &fb_a_bar, burst_cfg, "audio")?);
                updates.extend(visual.feedback(&fb_v, &fb_v_bar, burst_cfg, "visual")?);
                Ok(updates)
            }
        }
    }

    /// Forward pass plus loss, derivative and per-parameter gradients; nothing
    /// is applied.
    pub fn loss_gradients(
        &mut self,
        batch: &SampleBatch,
        pos_weight: f64,
        eps_log: f64,
        burst_cfg: &BurstConfig,
    ) -> Result<(f64, Vec<(String, Tensor)>)> {
        let probs = self.forward_pass(batch)?;
        let loss = wbce_loss(&probs, &batch.mask, pos_weight, eps_log)?;
        let grad = wbce_grad(&probs, &batch.mask, pos_weight, eps_log)?;
        let updates = self.feedback_gradients(&grad, burst_cfg)?;
        Ok((loss, updates))
    }

    /// One optimization step on a batch. Returns the loss before the update.
    pub fn learn_step(
        &mut self,
        batch: &SampleBatch,
        pos_weight: f64,
        eps_log: f64,
        burst_cfg: &BurstConfig,
        opt: &mut Adam,
    ) -> Result<f64> {
        let (loss, updates) = self.loss_gradients(batch, pos_weight, eps_log, burst_cfg)?;
        for (name, grad) in &updates {
            let param = self.param_mut(name).ok_or(Error::MissingState {
                op: "learn_step",
                missing: "parameter",
            })?;
            opt.step(name, param, grad)?;
        }
        Ok(loss)
    }

    /// Bursting probabilities cached at the head by the last burst feedback
    /// pass (mburst only).
    pub fn head_burst_probs(&self) -> Option<(&Tensor, &Tensor)> {
        match &self.net {
            Net::Burst { head, .. } => head.probs(),
            Net::Bp { .. } => None,
        }
    }

    /// Thresholded mask prediction; the boundary is inclusive.
    pub fn predict_mask(&mut self, batch: &SampleBatch, threshold: f64) -> Result<Tensor> {
        let probs = self.forward_pass(batch)?;
        Ok(probs.map(|p| if p >= threshold { 1.0 } else { 0.0 }))
    }

    /// Post-activation event rates of the hidden layers (convs and embeddings;
    /// the head is excluded), from the most recent forward pass.
    pub fn hidden_event_rates(&self) -> Vec<&Tensor> {
        match &self.net {
            Net::Bp { audio, visual, .. } => {
                let mut rates = audio.event_rates();
                if let Some(v) = visual {
                    rates.extend(v.event_rates());
                }
                rates
            }
            Net::Burst { audio, visual, .. } => {
                let mut rates = audio.event_rates();
                rates.extend(visual.event_rates());
                rates
            }
        }
    }

    /// Active fraction per hidden layer, from the most recent forward pass.
    pub fn layer_active_fractions(&self) -> Vec<f64> {
        self.hidden_event_rates()
            .into_iter()
            .map(active_fraction)
            .collect()
    }

    /// Names of all trainable parameters, in a stable order.
    pub fn param_names(&self) -> Vec<String> {
        let channel = |prefix: &str, burst: bool| -> Vec<String> {
            let mut names = Vec::new();
            for layer in ["conv1", "conv2", "embed"] {
                names.push(format!("{prefix}.{layer}.w"));
                if burst {
                    names.push(format!("{prefix}.{layer}.y"));
                }
            }
            names
        };
        let mut names = Vec::new();
        match &self.net {
            Net::Bp { visual, .. } => {
                names.extend(channel("audio", false));
                if visual.is_some() {
                    names.extend(channel("visual", false));
                }
                names.push("head.w".to_string());
            }
            Net::Burst { .. } => {
                names.extend(channel("audio", true));
                names.extend(channel("visual", true));
                names.push("head.w".to_string());
                names.push("head.y".to_string());
            }
        }
        names
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        match &self.net {
            Net::Bp {
                audio,
                visual,
                head,
            } => match name {
                "head.w" => Some(head.w()),
                _ => {
                    let (channel, rest) = name.split_once('.')?;
                    let ch = match channel {
                        "audio" => audio,
                        "visual" => visual.as_ref()?,
                        _ => return None,
                    };
                    match rest {
                        "conv1.w" => Some(ch.conv1.w()),
                        "conv2.w" => Some(ch.conv2.w()),
                        "embed.w" => Some(ch.embed.w()),
                        _ => None,
                    }
                }
            },
            Net::Burst {
                audio,
                visual,
                head,
            } => match name {
                "head.w" => Some(head.w()),
                "head.y" => Some(head.y()),
                _ => {
                    let (channel, rest) = name.split_once('.')?;
                    let ch = match channel {
                        "audio" => audio,
                        "visual" => visual,
                        _ => return None,
                    };
                    match rest {
                        "conv1.w" => Some(ch.conv1.w()),
                        "conv1.y" => Some(ch.conv1.y()),
                        "conv2.w" => Some(ch.conv2.w()),
                        "conv2.y" => Some(ch.conv2.y()),
                        "embed.w" => Some(ch.embed.w()),
                        "embed.y" => Some(ch.embed.y()),
                        _ => None,
                    }
                }
            },
        }
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        match &mut self.net {
            Net::Bp {
                audio,
                visual,
                head,
            } => match name {
                "head.w" => Some(head.w_mut()),
                _ => {
                    let (channel, rest) = name.split_once('.')?;
                    let ch = match channel {
                        "audio" => audio,
                        "visual" => visual.as_mut()?,
                        _ => return None,
                    };
                    match rest {
                        "conv1.w" => Some(ch.conv1.w_mut()),
                        "conv2.w" => Some(ch.conv2.w_mut()),
                        "embed.w" => Some(ch.embed.w_mut()),
                        _ => None,
                    }
                }
            },
            Net::Burst {
                audio,
                visual,
                head,
            } => match name {
                "head.w" => Some(head.w_mut()),
                "head.y" => Some(head.y_mut()),
                _ => {
                    let (channel, rest) = name.split_once('.')?;
                    let ch = match channel {
                        "audio" => audio,
                        "visual" => visual,
                        _ => return None,
                    };
                    match rest {
                        "conv1.w" => Some(ch.conv1.w_mut()),
                        "conv1.y" => Some(ch.conv1.y_mut()),
                        "conv2.w" => Some(ch.conv2.w_mut()),
                        "conv2.y" => Some(ch.conv2.y_mut()),
                        "embed.w" => Some(ch.embed.w_mut()),
                        "embed.y" => Some(ch.embed.y_mut()),
                        _ => None,
                    }
                }
            },
        }
    }

    /// Number of forward-weight scalars (feedback weights excluded, so burst
    /// and backprop graphs of the same shape report the same count).
    pub fn forward_param_count(&self) -> usize {
        self.param_names()
            .iter()
            .filter(|n| n.ends_with(".w"))
            .map(|n| self.param(n).map(Tensor::numel).unwrap_or(0))
            .sum()
    }
}

#[cfg(test)]
mod tests;
