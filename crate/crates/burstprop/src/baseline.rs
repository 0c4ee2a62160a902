//! Backpropagation layers with the same forward semantics as their burst
//! counterparts. Built on the same tensor kernels, so a burst layer and a
//! baseline layer with identical weights produce bit-identical event rates.

use crate::burst::{init_std, Activation};
use crate::error::{Error, Result};
use crate::tensor::{conv2d, conv2d_feedback, conv2d_weight_grad, matmul, Conv2dSpec, Rng, Tensor};

#[derive(Debug, Clone)]
struct DenseCache {
    input: Tensor,
    v: Tensor,
    e: Tensor,
}

/// Fully connected layer trained by the chain rule.
#[derive(Debug, Clone)]
pub struct BpDenseLayer {
    w: Tensor, // [n_out, n_in]
    activation: Activation,
    cache: Option<DenseCache>,
}

impl BpDenseLayer {
    pub fn new(w: Tensor, activation: Activation) -> Result<Self> {
        w.dims2("BpDenseLayer::new")?;
        Ok(BpDenseLayer {
            w,
            activation,
            cache: None,
        })
    }

    pub fn init(n_out: usize, n_in: usize, activation: Activation, rng: &mut Rng) -> Self {
        let w = rng.normal_tensor(&[n_out, n_in], init_std(activation, n_in));
        BpDenseLayer {
            w,
            activation,
            cache: None,
        }
    }

    pub fn w(&self) -> &Tensor {
        &self.w
    }

    pub fn w_mut(&mut self) -> &mut Tensor {
        &mut self.w
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn event_rate(&self) -> Option<&Tensor> {
        self.cache.as_ref().map(|c| &c.e)
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let [_, n_in] = input.dims2("dense forward")?;
        if n_in != self.w.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "dense forward",
                lhs: input.shape().to_vec(),
                rhs: self.w.shape().to_vec(),
            });
        }
        let v = matmul(input, &self.w.transpose()?)?;
        let e = self.activation.apply(&v);
        self.cache = Some(DenseCache {
            input: input.clone(),
            v,
            e: e.clone(),
        });
        Ok(e)
    }

    /// Chain rule through the layer: returns the gradient with respect to the
    /// input and the batch-averaged weight gradient.
    pub fn backward(&self, upstream: &Tensor) -> Result<(Tensor, Tensor)> {
        let cache = self.cache.as_ref().ok_or(Error::MissingState {
            op: "dense backward",
            missing: "forward pass",
        })?;
        if upstream.shape() != cache.e.shape() {
            return Err(Error::ShapeMismatch {
                op: "dense backward",
                lhs: upstream.shape().to_vec(),
                rhs: cache.e.shape().to_vec(),
            });
        }
        let delta = upstream.mul(&self.activation.prime(&cache.v, &cache.e))?;
        let input_grad = matmul(&delta, &self.w)?;
        let batch = cache.input.shape()[0] as f64;
        let weight_grad = matmul(&delta.transpose()?, &cache.input)?.scale(1.0 / batch);
        Ok((input_grad, weight_grad))
    }
}

#[derive(Debug, Clone)]
struct ConvCache {
    input: Tensor,
    v: Tensor,
    e: Tensor,
    in_hw: (usize, usize),
}

/// Convolutional layer trained by the chain rule.
#[derive(Debug, Clone)]
pub struct BpConv2dLayer {
    w: Tensor, // [Cout, Cin, kh, kw]
    spec: Conv2dSpec,
    activation: Activation,
    cache: Option<ConvCache>,
}

impl BpConv2dLayer {
    pub fn new(w: Tensor, spec: Conv2dSpec, activation: Activation) -> Result<Self> {
        if w.shape() != spec.kernel_shape() {
            return Err(Error::ShapeMismatch {
                op: "BpConv2dLayer::new",
                lhs: w.shape().to_vec(),
                rhs: spec.kernel_shape().to_vec(),
            });
        }
        Ok(BpConv2dLayer {
            w,
            spec,
            activation,
            cache: None,
        })
    }

    pub fn init(spec: Conv2dSpec, activation: Activation, rng: &mut Rng) -> Self {
        let fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w;
        let w = rng.normal_tensor(&spec.kernel_shape(), init_std(activation, fan_in));
        BpConv2dLayer {
            w,
            spec,
            activation,
            cache: None,
        }
    }

    pub fn w(&self) -> &Tensor {
        &self.w
    }

    pub fn w_mut(&mut self) -> &mut Tensor {
        &mut self.w
    }

    pub fn spec(&self) -> &Conv2dSpec {
        &self.spec
    }

    pub fn event_rate(&self) -> Option<&Tensor> {
        self.cache.as_ref().map(|c| &c.e)
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let [_, _, h, w] = input.dims4("conv forward")?;
        let v = conv2d(input, &self.w, &self.spec)?;
        let e = self.activation.apply(&v);
        self.cache = Some(ConvCache {
            input: input.clone(),
            v,
            e: e.clone(),
            in_hw: (h, w),
        });
        Ok(e)
    }

    pub fn backward(&self, upstream: &Tensor) -> Result<(Tensor, Tensor)> {
        let cache = self.cache.as_ref().ok_or(Error::MissingState {
            op: "conv backward",
            missing: "forward pass",
        })?;
        if upstream.shape() != cache.e.shape() {
            return Err(Error::ShapeMismatch {
                op: "conv backward",
                lhs: upstream.shape().to_vec(),
                rhs: cache.e.shape().to_vec(),
            });
        }
        let delta = upstream.mul(&self.activation.prime(&cache.v, &cache.e))?;
        let input_grad = conv2d_feedback(&delta, &self.w, &self.spec, cache.in_hw)?;
        let batch = cache.input.shape()[0] as f64;
        let weight_grad =
            conv2d_weight_grad(&cache.input, &delta, &self.spec)?.scale(1.0 / batch);
        Ok((input_grad, weight_grad))
    }
}
