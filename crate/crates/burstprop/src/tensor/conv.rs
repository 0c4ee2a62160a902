use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Geometry of a 2-D convolution: kernel extents, stride, zero padding and
/// channel counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2dSpec {
    pub fn new(
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        if kernel_h == 0 || kernel_w == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::Config(
                "conv spec extents and stride must be positive".into(),
            ));
        }
        Ok(Conv2dSpec {
            kernel_h,
            kernel_w,
            stride,
            padding,
            in_channels,
            out_channels,
        })
    }

    fn out_extent(&self, input: usize, kernel: usize, op: &'static str) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if padded < kernel {
            return Err(Error::ShapeMismatch {
                op,
                lhs: vec![input],
                rhs: vec![kernel],
            });
        }
        Ok((padded - kernel) / self.stride + 1)
    }

    /// Output spatial extents for a given input height/width.
    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            self.out_extent(h, self.kernel_h, "conv2d")?,
            self.out_extent(w, self.kernel_w, "conv2d")?,
        ))
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        ]
    }
}

/// Valid output-coordinate range [lo, hi] such that `o*stride + k_off - pad`
/// stays inside [0, in_extent). Returns None when the range is empty.
fn valid_range(
    k_off: usize,
    pad: usize,
    stride: usize,
    in_extent: usize,
    out_extent: usize,
) -> Option<(usize, usize)> {
    let lo = if pad > k_off {
        (pad - k_off).div_ceil(stride)
    } else {
        0
    };
    let top = in_extent - 1 + pad;
    if top < k_off {
        return None;
    }
    let hi = ((top - k_off) / stride).min(out_extent - 1);
    if lo > hi {
        return None;
    }
    Some((lo, hi))
}

fn check_kernel(kernel: &Tensor, spec: &Conv2dSpec, op: &'static str) -> Result<()> {
    if kernel.shape() != spec.kernel_shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: kernel.shape().to_vec(),
            rhs: spec.kernel_shape().to_vec(),
        });
    }
    Ok(())
}

/// 2-D cross-correlation with zero padding: [B,Cin,H,W] * [Cout,Cin,kh,kw]
/// -> [B,Cout,H',W'].
pub fn conv2d(input: &Tensor, kernel: &Tensor, spec: &Conv2dSpec) -> Result<Tensor> {
    let [b, cin, h, w] = input.dims4("conv2d")?;
    check_kernel(kernel, spec, "conv2d")?;
    if cin != spec.in_channels {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: input.shape().to_vec(),
            rhs: kernel.shape().to_vec(),
        });
    }
    let (oh, ow) = spec.out_hw(h, w)?;
    let cout = spec.out_channels;
    let (s, p) = (spec.stride, spec.padding);
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);

    let mut out = Tensor::zeros(&[b, cout, oh, ow]);
    let idata = input.data();
    let kdata = kernel.data();
    let odata = out.data_mut();

    for bi in 0..b {
        for co in 0..cout {
            let obase = (bi * cout + co) * oh * ow;
            for ci in 0..cin {
                let ibase = (bi * cin + ci) * h * w;
                let kbase = (co * cin + ci) * kh * kw;
                for ky in 0..kh {
                    let Some((oy_lo, oy_hi)) = valid_range(ky, p, s, h, oh) else {
                        continue;
                    };
                    for kx in 0..kw {
                        let Some((ox_lo, ox_hi)) = valid_range(kx, p, s, w, ow) else {
                            continue;
                        };
                        let kv = kdata[kbase + ky * kw + kx];
                        if kv == 0.0 {
                            continue;
                        }
                        for oy in oy_lo..=oy_hi {
                            let iy = oy * s + ky - p;
                            let irow = ibase + iy * w;
                            let orow = obase + oy * ow;
                            let mut ix = ox_lo * s + kx - p;
                            for ox in ox_lo..=ox_hi {
                                odata[orow + ox] += kv * idata[irow + ix];
                                ix += s;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Transposed convolution: the adjoint of [`conv2d`] in the sense
/// `<conv2d(x), y> == <x, conv2d_feedback(y)>` for every x, y.
///
/// `out_shape` gives the spatial extents (H, W) of the reconstructed input;
/// it resolves the stride ambiguity of the transpose.
pub fn conv2d_feedback(
    burst: &Tensor,
    kernel: &Tensor,
    spec: &Conv2dSpec,
    out_shape: (usize, usize),
) -> Result<Tensor> {
    let [b, cout, oh, ow] = burst.dims4("conv2d_feedback")?;
    check_kernel(kernel, spec, "conv2d_feedback")?;
    let (h, w) = out_shape;
    let (eh, ew) = spec.out_hw(h, w)?;
    if cout != spec.out_channels || oh != eh || ow != ew {
        return Err(Error::ShapeMismatch {
            op: "conv2d_feedback",
            lhs: burst.shape().to_vec(),
            rhs: vec![b, spec.out_channels, eh, ew],
        });
    }
    let cin = spec.in_channels;
    let (s, p) = (spec.stride, spec.padding);
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);

    let mut out = Tensor::zeros(&[b, cin, h, w]);
    let bdata = burst.data();
    let kdata = kernel.data();
    let odata = out.data_mut();

    for bi in 0..b {
        for co in 0..cout {
            let sbase = (bi * cout + co) * oh * ow;
            for ci in 0..cin {
                let obase = (bi * cin + ci) * h * w;
                let kbase = (co * cin + ci) * kh * kw;
                for ky in 0..kh {
                    let Some((oy_lo, oy_hi)) = valid_range(ky, p, s, h, oh) else {
                        continue;
                    };
                    for kx in 0..kw {
                        let Some((ox_lo, ox_hi)) = valid_range(kx, p, s, w, ow) else {
                            continue;
                        };
                        let kv = kdata[kbase + ky * kw + kx];
                        if kv == 0.0 {
                            continue;
                        }
                        for oy in oy_lo..=oy_hi {
                            let iy = oy * s + ky - p;
                            let orow = obase + iy * w;
                            let srow = sbase + oy * ow;
                            let mut ix = ox_lo * s + kx - p;
                            for ox in ox_lo..=ox_hi {
                                odata[orow + ix] += kv * bdata[srow + ox];
                                ix += s;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Kernel-shaped accumulation of `delta`-weighted input patches, summed over
/// the batch: the derivative of `sum(conv2d(input) * delta)` with respect to
/// the kernel.
pub fn conv2d_weight_grad(input: &Tensor, delta: &Tensor, spec: &Conv2dSpec) -> Result<Tensor> {
    let [b, cin, h, w] = input.dims4("conv2d_weight_grad")?;
    let [bd, cout, oh, ow] = delta.dims4("conv2d_weight_grad")?;
    let (eh, ew) = spec.out_hw(h, w)?;
    if cin != spec.in_channels
        || cout != spec.out_channels
        || bd != b
        || oh != eh
        || ow != ew
    {
        return Err(Error::ShapeMismatch {
            op: "conv2d_weight_grad",
            lhs: input.shape().to_vec(),
            rhs: delta.shape().to_vec(),
        });
    }
    let (s, p) = (spec.stride, spec.padding);
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);

    let mut grad = Tensor::zeros(&spec.kernel_shape());
    let idata = input.data();
    let ddata = delta.data();
    let gdata = grad.data_mut();

    for bi in 0..b {
        for co in 0..cout {
            let dbase = (bi * cout + co) * oh * ow;
            for ci in 0..cin {
                let ibase = (bi * cin + ci) * h * w;
                let kbase = (co * cin + ci) * kh * kw;
                for ky in 0..kh {
                    let Some((oy_lo, oy_hi)) = valid_range(ky, p, s, h, oh) else {
                        continue;
                    };
                    for kx in 0..kw {
                        let Some((ox_lo, ox_hi)) = valid_range(kx, p, s, w, ow) else {
                            continue;
                        };
                        let mut acc = 0.0;
                        for oy in oy_lo..=oy_hi {
                            let iy = oy * s + ky - p;
                            let irow = ibase + iy * w;
                            let drow = dbase + oy * ow;
                            let mut ix = ox_lo * s + kx - p;
                            for ox in ox_lo..=ox_hi {
                                acc += ddata[drow + ox] * idata[irow + ix];
                                ix += s;
                            }
                        }
                        gdata[kbase + ky * kw + kx] += acc;
                    }
                }
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Rng, Stream};

    fn spec(k: usize, s: usize, p: usize, cin: usize, cout: usize) -> Conv2dSpec {
        Conv2dSpec::new(k, k, s, p, cin, cout).unwrap()
    }

    /// Independent im2col oracle: materializes the patch matrix and reduces the
    /// convolution to a plain matrix product.
    fn conv2d_im2col(input: &Tensor, kernel: &Tensor, sp: &Conv2dSpec) -> Tensor {
        let [b, cin, h, w] = input.dims4("oracle").unwrap();
        let (oh, ow) = sp.out_hw(h, w).unwrap();
        let cout = sp.out_channels;
        let cols = cin * sp.kernel_h * sp.kernel_w;
        let mut out = Tensor::zeros(&[b, cout, oh, ow]);
        for bi in 0..b {
            // patches: [cols, oh*ow]
            let mut patches = vec![0.0; cols * oh * ow];
            for ci in 0..cin {
                for ky in 0..sp.kernel_h {
                    for kx in 0..sp.kernel_w {
                        let row = (ci * sp.kernel_h + ky) * sp.kernel_w + kx;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let iy = (oy * sp.stride + ky) as isize - sp.padding as isize;
                                let ix = (ox * sp.stride + kx) as isize - sp.padding as isize;
                                let v = if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w
                                {
                                    input.data()[((bi * cin + ci) * h + iy as usize) * w + ix as usize]
                                } else {
                                    0.0
                                };
                                patches[row * oh * ow + oy * ow + ox] = v;
                            }
                        }
                    }
                }
            }
            for co in 0..cout {
                for pos in 0..oh * ow {
                    let mut acc = 0.0;
                    for c in 0..cols {
                        acc += kernel.data()[co * cols + c] * patches[c * oh * ow + pos];
                    }
                    out.data_mut()[(bi * cout + co) * oh * ow + pos] = acc;
                }
            }
        }
        out
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let sp = spec(3, 1, 1, 1, 1);
        let input = Tensor::zeros(&[1, 1, 4, 4]);
        let kernel = Tensor::full(&sp.kernel_shape(), 0.7);
        let out = conv2d(&input, &kernel, &sp).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ones_3x3_kernel_of_ones() {
        let sp = spec(3, 1, 1, 1, 1);
        let input = Tensor::full(&[1, 1, 3, 3], 1.0);
        let kernel = Tensor::full(&sp.kernel_shape(), 1.0);
        let out = conv2d(&input, &kernel, &sp).unwrap();
        // each output counts the in-bounds window cells
        assert_eq!(
            out.data(),
            &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]
        );
    }

    #[test]
    fn stride2_extent() {
        let sp = spec(3, 2, 1, 1, 1);
        let input = Tensor::full(&[1, 1, 8, 8], 1.0);
        let kernel = Tensor::full(&sp.kernel_shape(), 1.0);
        let out = conv2d(&input, &kernel, &sp).unwrap();
        assert_eq!(out.shape(), &[1, 1, 4, 4]);
    }

    #[test]
    fn channel_mismatch_is_error() {
        let sp = spec(3, 1, 1, 2, 1);
        let input = Tensor::zeros(&[1, 1, 4, 4]);
        let kernel = Tensor::zeros(&sp.kernel_shape());
        assert!(conv2d(&input, &kernel, &sp).is_err());
    }

    #[test]
    fn matches_im2col_oracle_on_random_instances() {
        let mut rng = Rng::seeded(11, Stream::Tests);
        for case in 0..30 {
            let k = 1 + case % 3;
            let s = 1 + case % 2;
            let p = case % 3;
            let cin = 1 + case % 2;
            let cout = 1 + (case / 2) % 2;
            let h = (k + s + case % 4).min(6);
            let w = (k + (case / 3) % 4).min(6);
            let sp = spec(k, s, p, cin, cout);
            if sp.out_hw(h, w).is_err() {
                continue;
            }
            let input = rng.uniform_tensor(&[2, cin, h, w], -1.0, 1.0);
            let kernel = rng.uniform_tensor(&sp.kernel_shape(), -1.0, 1.0);
            let fast = conv2d(&input, &kernel, &sp).unwrap();
            let slow = conv2d_im2col(&input, &kernel, &sp);
            assert!(max_abs_diff(&fast, &slow) < 1e-9, "case {case}");
        }
    }

    #[test]
    fn feedback_of_zero_burst_is_zero() {
        let sp = spec(3, 1, 1, 1, 1);
        let burst = Tensor::zeros(&[1, 1, 4, 4]);
        let kernel = Tensor::full(&sp.kernel_shape(), 0.3);
        let out = conv2d_feedback(&burst, &kernel, &sp, (4, 4)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjoint_identity_random_4x4() {
        let mut rng = Rng::seeded(5, Stream::Tests);
        let sp = spec(3, 1, 1, 1, 1);
        let x = rng.uniform_tensor(&[1, 1, 4, 4], -1.0, 1.0);
        let y = rng.uniform_tensor(&[1, 1, 4, 4], -1.0, 1.0);
        let kernel = rng.uniform_tensor(&sp.kernel_shape(), -1.0, 1.0);
        let fwd = conv2d(&x, &kernel, &sp).unwrap();
        let bwd = conv2d_feedback(&y, &kernel, &sp, (4, 4)).unwrap();
        assert!((dot(&fwd, &y) - dot(&x, &bwd)).abs() < 1e-9);
    }

    #[test]
    fn adjoint_identity_20_seeded_instances() {
        for seed in 0..20u64 {
            let mut rng = Rng::seeded(100 + seed, Stream::Tests);
            let k = 1 + (seed % 3) as usize;
            let s = 1 + (seed % 2) as usize;
            let p = (seed % 2) as usize;
            let cin = 1 + (seed % 2) as usize;
            let cout = 1 + (seed / 3 % 2) as usize;
            let (h, w) = (4 + (seed % 3) as usize, 4 + (seed / 2 % 3) as usize);
            let sp = spec(k, s, p, cin, cout);
            let (oh, ow) = sp.out_hw(h, w).unwrap();
            let x = rng.uniform_tensor(&[2, cin, h, w], -1.0, 1.0);
            let y = rng.uniform_tensor(&[2, cout, oh, ow], -1.0, 1.0);
            let kernel = rng.uniform_tensor(&sp.kernel_shape(), -1.0, 1.0);
            let fwd = conv2d(&x, &kernel, &sp).unwrap();
            let bwd = conv2d_feedback(&y, &kernel, &sp, (h, w)).unwrap();
            assert!(
                (dot(&fwd, &y) - dot(&x, &bwd)).abs() < 1e-9,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn stride2_feedback_matches_im2col_transpose() {
        // 1x1x2x2 burst scattered back into 4x4 through a stride-2 3x3 kernel.
        let mut rng = Rng::seeded(7, Stream::Tests);
        let sp = spec(3, 2, 1, 1, 1);
        let (h, w) = (4, 4);
        let (oh, ow) = sp.out_hw(h, w).unwrap();
        assert_eq!((oh, ow), (2, 2));
        let burst = rng.uniform_tensor(&[1, 1, oh, ow], -1.0, 1.0);
        let kernel = rng.uniform_tensor(&sp.kernel_shape(), -1.0, 1.0);

        // explicit im2col matrix M: rows = output positions, cols = input pixels;
        // the transpose maps output space back to input space.
        let mut m = vec![0.0; (oh * ow) * (h * w)];
        for oy in 0..oh {
            for ox in 0..ow {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = (oy * 2 + ky) as isize - 1;
                        let ix = (ox * 2 + kx) as isize - 1;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            m[(oy * ow + ox) * (h * w) + iy as usize * w + ix as usize] +=
                                kernel.data()[ky * 3 + kx];
                        }
                    }
                }
            }
        }
        let mut expect = vec![0.0; h * w];
        for pos in 0..oh * ow {
            for px in 0..h * w {
                expect[px] += m[pos * (h * w) + px] * burst.data()[pos];
            }
        }
        let got = conv2d_feedback(&burst, &kernel, &sp, (h, w)).unwrap();
        for (a, b) in got.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_grad_zero_delta() {
        let sp = spec(3, 1, 1, 1, 1);
        let input = Tensor::full(&[1, 1, 4, 4], 0.5);
        let delta = Tensor::zeros(&[1, 1, 4, 4]);
        let grad = conv2d_weight_grad(&input, &delta, &sp).unwrap();
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weight_grad_matches_central_differences() {
        let mut rng = Rng::seeded(3, Stream::Tests);
        let sp = spec(3, 1, 1, 1, 1);
        let input = rng.uniform_tensor(&[1, 1, 4, 4], -1.0, 1.0);
        let delta = rng.uniform_tensor(&[1, 1, 4, 4], -1.0, 1.0);
        let mut kernel = rng.uniform_tensor(&sp.kernel_shape(), -1.0, 1.0);
        let grad = conv2d_weight_grad(&input, &delta, &sp).unwrap();
        let h = 1e-5;
        for idx in 0..kernel.numel() {
            let orig = kernel.data()[idx];
            kernel.data_mut()[idx] = orig + h;
            let up = dot(&conv2d(&input, &kernel, &sp).unwrap(), &delta);
            kernel.data_mut()[idx] = orig - h;
            let dn = dot(&conv2d(&input, &kernel, &sp).unwrap(), &delta);
            kernel.data_mut()[idx] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - grad.data()[idx]).abs() < 1e-6, "coord {idx}");
        }
    }

    #[test]
    fn weight_grad_batch_linearity() {
        let mut rng = Rng::seeded(9, Stream::Tests);
        let sp = spec(3, 1, 1, 1, 2);
        let single = rng.uniform_tensor(&[1, 1, 5, 5], -1.0, 1.0);
        let delta = rng.uniform_tensor(&[1, 2, 5, 5], -1.0, 1.0);
        let mut doubled_in = single.data().to_vec();
        doubled_in.extend_from_slice(single.data());
        let mut doubled_delta = delta.data().to_vec();
        doubled_delta.extend_from_slice(delta.data());
        let two_in = Tensor::new(vec![2, 1, 5, 5], doubled_in).unwrap();
        let two_delta = Tensor::new(vec![2, 2, 5, 5], doubled_delta).unwrap();
        let g1 = conv2d_weight_grad(&single, &delta, &sp).unwrap();
        let g2 = conv2d_weight_grad(&two_in, &two_delta, &sp).unwrap();
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }
}
