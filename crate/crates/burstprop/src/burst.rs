//! Burst-propagation primitives and layers.
//!
//! The learning signal travels backward as a pair of burst-rate tensors: one
//! computed with the teaching signal, one without. Each layer turns the
//! arriving pair into dendritic potentials, bursting probabilities, and its
//! own outgoing pair; weights move by the taught/untaught gap times the
//! presynaptic event rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv2d, conv2d_feedback, conv2d_weight_grad, matmul, Conv2dSpec, Rng, Tensor};

/// Pointwise nonlinearity of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(&self, v: &Tensor) -> Tensor {
        match self {
            Activation::Relu => v.relu(),
            Activation::Sigmoid => v.sigmoid(),
        }
    }

    /// Derivative with respect to the pre-activation, expressed through the
    /// cached pre-activation `v` and event rate `e`.
    pub fn prime(&self, v: &Tensor, e: &Tensor) -> Tensor {
        match self {
            Activation::Relu => v.relu_prime(),
            Activation::Sigmoid => e.map(|s| s * (1.0 - s)),
        }
    }
}

/// How the feedback weights are initialized relative to the forward weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackInit {
    #[default]
    Symmetric,
    Random,
}

/// Constants of the burst mechanism.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BurstConfig {
    /// Reference bursting probability at the output layer.
    pub p_bar_top: f64,
    /// Gain of the dendritic transfer function.
    pub beta: f64,
    /// Offset of the dendritic transfer function.
    pub alpha: f64,
    /// Event-rate floor below which the h(e) division is suppressed.
    pub eps_event: f64,
}

impl Default for BurstConfig {
    fn default() -> Self {
        BurstConfig {
            p_bar_top: 0.2,
            beta: 1.0,
            alpha: 0.0,
            eps_event: 1e-8,
        }
    }
}

impl BurstConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_bar_top > 0.0 && self.p_bar_top < 1.0) {
            return Err(Error::Config(format!(
                "p_bar_top must lie in (0,1), got {}",
                self.p_bar_top
            )));
        }
        if self.eps_event <= 0.0 {
            return Err(Error::Config(format!(
                "eps_event must be positive, got {}",
                self.eps_event
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Pure per-tensor steps shared by dense and conv layers.
// ---------------------------------------------------------------------------

/// h(e) = f'(v) / e with the division suppressed below `eps_event`.
pub fn h_from(activation: Activation, v: &Tensor, e: &Tensor, eps_event: f64) -> Tensor {
    let prime = activation.prime(v, e);
    prime
        .div_safe(e, eps_event)
        .expect("prime and e share v's shape")
}

/// Output-layer bursting probabilities: p = clamp01(p_bar - h(e) * dL/de),
/// p_bar constant.
fn output_probs(h: &Tensor, loss_grad_e: &Tensor, cfg: &BurstConfig) -> Result<(Tensor, Tensor)> {
    let p_bar = Tensor::full(h.shape(), cfg.p_bar_top);
    let p = p_bar.sub(&h.mul(loss_grad_e)?)?.clamp01();
    Ok((p, p_bar))
}

/// Burst rates from probabilities: b = p * e.
fn rates(p: &Tensor, p_bar: &Tensor, e: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((p.mul(e)?, p_bar.mul(e)?))
}

/// Hidden-layer probabilities from dendritic potentials: p = sigmoid(beta*u + alpha).
fn hidden_probs(u: &Tensor, u_bar: &Tensor, cfg: &BurstConfig) -> (Tensor, Tensor) {
    let squash = |t: &Tensor| t.map(|x| crate::tensor::sigmoid_scalar(cfg.beta * x + cfg.alpha));
    (squash(u), squash(u_bar))
}

#[derive(Debug, Clone, Default)]
struct FeedbackState {
    u: Option<(Tensor, Tensor)>,
    p: Option<(Tensor, Tensor)>,
    b: Option<(Tensor, Tensor)>,
}

// ---------------------------------------------------------------------------
// Dense layer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct DenseForward {
    input: Tensor, // [B, n_in]
    v: Tensor,     // [B, n_out]
    e: Tensor,     // [B, n_out]
}

/// Fully connected burst layer: forward weights `w: [n_out, n_in]`, feedback
/// weights `y: [n_in, n_out]` carrying this layer's bursts back to its input
/// side.
#[derive(Debug, Clone)]
pub struct BurstDenseLayer {
    w: Tensor,
    y: Tensor,
    activation: Activation,
    fwd: Option<DenseForward>,
    state: FeedbackState,
}

impl BurstDenseLayer {
    pub fn new(w: Tensor, y: Tensor, activation: Activation) -> Result<Self> {
        let [n_out, n_in] = w.dims2("BurstDenseLayer::new")?;
        if y.shape() != [n_in, n_out] {
            return Err(Error::ShapeMismatch {
                op: "BurstDenseLayer::new",
                lhs: y.shape().to_vec(),
                rhs: vec![n_in, n_out],
            });
        }
        Ok(BurstDenseLayer {
            w,
            y,
            activation,
            fwd: None,
            state: FeedbackState::default(),
        })
    }

    /// Seeded initialization; `Symmetric` starts the feedback weights at the
    /// exact transpose of the forward weights.
    pub fn init(
        n_out: usize,
        n_in: usize,
        activation: Activation,
        feedback: FeedbackInit,
        rng: &mut Rng,
    ) -> Self {
        let std = init_std(activation, n_in);
        let w = rng.normal_tensor(&[n_out, n_in], std);
        let y = match feedback {
            FeedbackInit::Symmetric => w.transpose().expect("w is 2-D"),
            FeedbackInit::Random => rng.normal_tensor(&[n_in, n_out], std),
        };
        BurstDenseLayer {
            w,
            y,
            activation,
            fwd: None,
            state: FeedbackState::default(),
        }
    }

    pub fn w(&self) -> &Tensor {
        &self.w
    }

    pub fn y(&self) -> &Tensor {
        &self.y
    }

    pub fn w_mut(&mut self) -> &mut Tensor {
        &mut self.w
    }

    pub fn y_mut(&mut self) -> &mut Tensor {
        &mut self.y
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn out_features(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.w.shape()[1]
    }

    /// Event rate cached by the last forward pass.
    pub fn event_rate(&self) -> Option<&Tensor> {
        self.fwd.as_ref().map(|f| &f.e)
    }

    /// Cached bursting probabilities (with, without teacher).
    pub fn probs(&self) -> Option<(&Tensor, &Tensor)> {
        self.state.p.as_ref().map(|(p, p_bar)| (p, p_bar))
    }

    /// Cached burst rates (with, without teacher).
    pub fn rates(&self) -> Option<(&Tensor, &Tensor)> {
        self.state.b.as_ref().map(|(b, b_bar)| (b, b_bar))
    }

    /// Somatic potential, event rate: v = W e_prev (rows are samples), e = f(v).
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let [_, n_in] = input.dims2("dense forward")?;
        if n_in != self.in_features() {
            return Err(Error::ShapeMismatch {
                op: "dense forward",
                lhs: input.shape().to_vec(),
                rhs: self.w.shape().to_vec(),
            });
        }
        let v = matmul(input, &self.w.transpose()?)?;
        let e = self.activation.apply(&v);
        self.fwd = Some(DenseForward {
            input: input.clone(),
            v,
            e: e.clone(),
        });
        self.state = FeedbackState::default();
        Ok(e)
    }

    fn forward_cache(&self, op: &'static str) -> Result<&DenseForward> {
        self.fwd.as_ref().ok_or(Error::MissingState {
            op,
            missing: "forward pass",
        })
    }

    pub fn h_of_e(&self, cfg: &BurstConfig) -> Result<Tensor> {
        let fwd = self.forward_cache("h_of_e")?;
        Ok(h_from(self.activation, &fwd.v, &fwd.e, cfg.eps_event))
    }

    /// Output-layer teaching step; caches (p, p_bar).
    pub fn output_burst_prob(
        &mut self,
        loss_grad_e: &Tensor,
        cfg: &BurstConfig,
    ) -> Result<(Tensor, Tensor)> {
        let h = self.h_of_e(cfg)?;
        if loss_grad_e.shape() != h.shape() {
            return Err(Error::ShapeMismatch {
                op: "output_burst_prob",
                lhs: loss_grad_e.shape().to_vec(),
                rhs: h.shape().to_vec(),
            });
        }
        let (p, p_bar) = output_probs(&h, loss_grad_e, cfg)?;
        self.state.p = Some((p.clone(), p_bar.clone()));
        Ok((p, p_bar))
    }

    /// b = p * e and the teacher-free twin; caches both.
    pub fn burst_rates(&mut self) -> Result<(Tensor, Tensor)> {
        let e = self.forward_cache("burst_rates")?.e.clone();
        let (p, p_bar) = self.state.p.clone().ok_or(Error::MissingState {
            op: "burst_rates",
            missing: "bursting probabilities",
        })?;
        let (b, b_bar) = rates(&p, &p_bar, &e)?;
        self.state.b = Some((b.clone(), b_bar.clone()));
        Ok((b, b_bar))
    }

    /// Maps the cached burst-rate pair through the feedback weights, into this
    /// layer's input space.
    pub fn project_feedback(&self) -> Result<(Tensor, Tensor)> {
        let (b, b_bar) = self.state.b.as_ref().ok_or(Error::MissingState {
            op: "project_feedback",
            missing: "burst rates",
        })?;
        let yt = self.y.transpose()?;
        Ok((matmul(b, &yt)?, matmul(b_bar, &yt)?))
    }

    /// Hidden-layer dendritic potentials from the feedback pair arriving at
    /// this layer's output space (the downstream layer's projected bursts):
    /// u = h(e) * fb.
    pub fn dendritic_potentials(
        &mut self,
        fb: &Tensor,
        fb_bar: &Tensor,
        cfg: &BurstConfig,
    ) -> Result<(Tensor, Tensor)> {
        let h = self.h_of_e(cfg)?;
        let u = h.mul(fb)?;
        let u_bar = h.mul(fb_bar)?;
        self.state.u = Some((u.clone(), u_bar.clone()));
        Ok((u, u_bar))
    }

    /// p = sigmoid(beta*u + alpha) and the teacher-free twin; caches both.
    pub fn hidden_burst_prob(&mut self, cfg: &BurstConfig) -> Result<(Tensor, Tensor)> {
        let (u, u_bar) = self.state.u.as_ref().ok_or(Error::MissingState {
            op: "hidden_burst_prob",
            missing: "dendritic potentials",
        })?;
        let (p, p_bar) = hidden_probs(u, u_bar, cfg);
        self.state.p = Some((p.clone(), p_bar.clone()));
        Ok((p, p_bar))
    }

    /// Optimizer-ready pseudo-gradients, batch-averaged:
    /// `g_w = mean_b outer(b_bar - b, e_prev)` and `g_y = g_w^T`, so one
    /// descent step potentiates where bursting exceeded its teacher-free
    /// baseline.
    pub fn weight_update(&self) -> Result<(Tensor, Tensor)> {
        let fwd = self.forward_cache("weight_update")?;
        let (b, b_bar) = self.state.b.as_ref().ok_or(Error::MissingState {
            op: "weight_update",
            missing: "burst rates",
        })?;
        let batch = fwd.input.shape()[0] as f64;
        let bdiff = b_bar.sub(b)?;
        let g_w = matmul(&bdiff.transpose()?, &fwd.input)?.scale(1.0 / batch);
        let g_y = g_w.transpose()?;
        Ok((g_w, g_y))
    }
}

// ---------------------------------------------------------------------------
// Convolutional layer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct ConvForward {
    input: Tensor, // [B, Cin, H, W]
    v: Tensor,     // [B, Cout, H', W']
    e: Tensor,
    in_hw: (usize, usize),
}

/// Convolutional burst layer: forward kernel `w` and feedback kernel `y`,
/// both `[Cout, Cin, kh, kw]`; the feedback kernel is applied as a transposed
/// convolution.
#[derive(Debug, Clone)]
pub struct BurstConv2dLayer {
    w: Tensor,
    y: Tensor,
    spec: Conv2dSpec,
    activation: Activation,
    fwd: Option<ConvForward>,
    state: FeedbackState,
}

impl BurstConv2dLayer {
    pub fn new(w: Tensor, y: Tensor, spec: Conv2dSpec, activation: Activation) -> Result<Self> {
        for t in [&w, &y] {
            if t.shape() != spec.kernel_shape() {
                return Err(Error::ShapeMismatch {
                    op: "BurstConv2dLayer::new",
                    lhs: t.shape().to_vec(),
                    rhs: spec.kernel_shape().to_vec(),
                });
            }
        }
        Ok(BurstConv2dLayer {
            w,
            y,
            spec,
            activation,
            fwd: None,
            state: FeedbackState::default(),
        })
    }

    pub fn init(
        spec: Conv2dSpec,
        activation: Activation,
        feedback: FeedbackInit,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w;
        let std = init_std(activation, fan_in);
        let w = rng.normal_tensor(&spec.kernel_shape(), std);
        let y = match feedback {
            FeedbackInit::Symmetric => w.clone(),
            FeedbackInit::Random => rng.normal_tensor(&spec.kernel_shape(), std),
        };
        BurstConv2dLayer {
            w,
            y,
            spec,
            activation,
            fwd: None,
            state: FeedbackState::default(),
        }
    }

    pub fn w(&self) -> &Tensor {
        &self.w
    }

    pub fn y(&self) -> &Tensor {
        &self.y
    }

    pub fn w_mut(&mut self) -> &mut Tensor {
        &mut self.w
    }

    pub fn y_mut(&mut self) -> &mut Tensor {
        &mut self.y
    }

    pub fn spec(&self) -> &Conv2dSpec {
        &self.spec
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn event_rate(&self) -> Option<&Tensor> {
        self.fwd.as_ref().map(|f| &f.e)
    }

    pub fn probs(&self) -> Option<(&Tensor, &Tensor)> {
        self.state.p.as_ref().map(|(p, p_bar)| (p, p_bar))
    }

    pub fn rates(&self) -> Option<(&Tensor, &Tensor)> {
        self.state.b.as_ref().map(|(b, b_bar)| (b, b_bar))
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let [_, _, h, w] = input.dims4("conv forward")?;
        let v = conv2d(input, &self.w, &self.spec)?;
        let e = self.activation.apply(&v);
        self.fwd = Some(ConvForward {
            input: input.clone(),
            v,
            e: e.clone(),
            in_hw: (h, w),
        });
        self.state = FeedbackState::default();
        Ok(e)
    }

    fn forward_cache(&self, op: &'static str) -> Result<&ConvForward> {
        self.fwd.as_ref().ok_or(Error::MissingState {
            op,
            missing: "forward pass",
        })
    }

    pub fn h_of_e(&self, cfg: &BurstConfig) -> Result<Tensor> {
        let fwd = self.forward_cache("h_of_e")?;
        Ok(h_from(self.activation, &fwd.v, &fwd.e, cfg.eps_event))
    }

    pub fn burst_rates(&mut self) -> Result<(Tensor, Tensor)> {
        let e = self.forward_cache("burst_rates")?.e.clone();
        let (p, p_bar) = self.state.p.clone().ok_or(Error::MissingState {
            op: "burst_rates",
            missing: "bursting probabilities",
        })?;
        let (b, b_bar) = rates(&p, &p_bar, &e)?;
        self.state.b = Some((b.clone(), b_bar.clone()));
        Ok((b, b_bar))
    }

    /// Transposed convolution of the cached burst pair back into this layer's
    /// input space.
    pub fn project_feedback(&self) -> Result<(Tensor, Tensor)> {
        let fwd = self.forward_cache("project_feedback")?;
        let (b, b_bar) = self.state.b.as_ref().ok_or(Error::MissingState {
            op: "project_feedback",
            missing: "burst rates",
        })?;
        Ok((
            conv2d_feedback(b, &self.y, &self.spec, fwd.in_hw)?,
            conv2d_feedback(b_bar, &self.y, &self.spec, fwd.in_hw)?,
        ))
    }

    pub fn dendritic_potentials(
        &mut self,
        fb: &Tensor,
        fb_bar: &Tensor,
        cfg: &BurstConfig,
    ) -> Result<(Tensor, Tensor)> {
        let h = self.h_of_e(cfg)?;
        let u = h.mul(fb)?;
        let u_bar = h.mul(fb_bar)?;
        self.state.u = Some((u.clone(), u_bar.clone()));
        Ok((u, u_bar))
    }

    pub fn hidden_burst_prob(&mut self, cfg: &BurstConfig) -> Result<(Tensor, Tensor)> {
        let (u, u_bar) = self.state.u.as_ref().ok_or(Error::MissingState {
            op: "hidden_burst_prob",
            missing: "dendritic potentials",
        })?;
        let (p, p_bar) = hidden_probs(u, u_bar, cfg);
        self.state.p = Some((p.clone(), p_bar.clone()));
        Ok((p, p_bar))
    }

    /// Pseudo-gradients: `g_w = conv2d_weight_grad(e_prev, b_bar - b) / B`;
    /// the feedback kernel receives the identical update.
    pub fn weight_update(&self) -> Result<(Tensor, Tensor)> {
        let fwd = self.forward_cache("weight_update")?;
        let (b, b_bar) = self.state.b.as_ref().ok_or(Error::MissingState {
            op: "weight_update",
            missing: "burst rates",
        })?;
        let batch = fwd.input.shape()[0] as f64;
        let bdiff = b_bar.sub(b)?;
        let g_w = conv2d_weight_grad(&fwd.input, &bdiff, &self.spec)?.scale(1.0 / batch);
        let g_y = g_w.clone();
        Ok((g_w, g_y))
    }
}

pub(crate) fn init_std(activation: Activation, fan_in: usize) -> f64 {
    match activation {
        Activation::Relu => (2.0 / fan_in as f64).sqrt(),
        Activation::Sigmoid => (1.0 / fan_in as f64).sqrt(),
    }
}
