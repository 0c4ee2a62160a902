//! Dense row-major f64 tensors and the numeric kernels the layers are built on.
//!
//! Tensors are plain values: every operation returns a fresh tensor and checks
//! shapes explicitly. There is no broadcasting and no view machinery.

mod conv;
mod mbt;
mod rng;

pub use conv::{conv2d, conv2d_feedback, conv2d_weight_grad, Conv2dSpec};
pub use mbt::{f32_quantize, read_mbt, write_mbt, MBT_MAGIC};
pub use rng::{Rng, Stream};

use crate::error::{Error, Result};

/// Dense n-dimensional array of f64 values in row-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and matching data vector.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Identity matrix of extent `n`.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterprets the value under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        let [m, n] = self.dims2("transpose")?;
        let mut out = Tensor::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                out.data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", |a, b| a * b)
    }

    /// Elementwise quotient with a suppressed denominator: entries where
    /// `|b| <= eps` yield 0 instead of dividing.
    pub fn div_safe(&self, other: &Tensor, eps: f64) -> Result<Tensor> {
        self.zip(other, "div_safe", |a, b| {
            if b.abs() > eps {
                a / b
            } else {
                0.0
            }
        })
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    /// Derivative of relu with respect to its argument; 0 at the kink.
    pub fn relu_prime(&self) -> Tensor {
        self.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid_scalar)
    }

    pub fn clamp01(&self) -> Tensor {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Outer product of two vectors: [m] x [n] -> [m, n].
    pub fn outer(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, n) = match (a.shape.as_slice(), b.shape.as_slice()) {
            (&[m], &[n]) => (m, n),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "outer",
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                })
            }
        };
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                out.data[i * n + j] = a.data[i] * b.data[j];
            }
        }
        Ok(out)
    }

    /// Concatenates two matrices along the column axis: [B,m] + [B,n] -> [B,m+n].
    pub fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let [ba, m] = a.dims2("concat_cols")?;
        let [bb, n] = b.dims2("concat_cols")?;
        if ba != bb {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let mut data = Vec::with_capacity(ba * (m + n));
        for r in 0..ba {
            data.extend_from_slice(&a.data[r * m..(r + 1) * m]);
            data.extend_from_slice(&b.data[r * n..(r + 1) * n]);
        }
        Tensor::new(vec![ba, m + n], data)
    }

    /// Splits a matrix at column `at`: [B,m+n] -> ([B,at], [B,cols-at]).
    pub fn split_cols(&self, at: usize) -> Result<(Tensor, Tensor)> {
        let [b, cols] = self.dims2("split_cols")?;
        if at == 0 || at >= cols {
            return Err(Error::ShapeMismatch {
                op: "split_cols",
                lhs: self.shape.clone(),
                rhs: vec![at],
            });
        }
        let n = cols - at;
        let mut left = Vec::with_capacity(b * at);
        let mut right = Vec::with_capacity(b * n);
        for r in 0..b {
            left.extend_from_slice(&self.data[r * cols..r * cols + at]);
            right.extend_from_slice(&self.data[r * cols + at..(r + 1) * cols]);
        }
        Ok((Tensor::new(vec![b, at], left)?, Tensor::new(vec![b, n], right)?))
    }

    pub fn dims2(&self, op: &'static str) -> Result<[usize; 2]> {
        match self.shape.as_slice() {
            &[a, b] => Ok([a, b]),
            _ => Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: vec![],
            }),
        }
    }

    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape.as_slice() {
            &[a, b, c, d] => Ok([a, b, c, d]),
            _ => Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: vec![],
            }),
        }
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Standard matrix product: [m,k] x [k,n] -> [m,n].
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [m, ka] = a.dims2("matmul")?;
    let [kb, n] = b.dims2("matmul")?;
    if ka != kb {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let arow = &a.data[i * ka..(i + 1) * ka];
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (t, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[t * n..(t + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Ok(out)
}

/// Mean of all elements.
pub fn mean(t: &Tensor) -> f64 {
    t.data.iter().sum::<f64>() / t.numel() as f64
}

/// Fraction of strictly positive elements.
pub fn active_fraction(t: &Tensor) -> f64 {
    let active = t.data.iter().filter(|&&v| v > 0.0).count();
    active as f64 / t.numel() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::eye(2);
        let v = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        let out = matmul(&i2, &v).unwrap();
        assert_eq!(out.data(), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_expanded() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let out = matmul(&a, &b).unwrap();
        assert_eq!(out.shape(), &[2, 1]);
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn elementwise_examples() {
        let v = Tensor::from_vec(vec![-1.0, 0.0, 2.0]);
        assert_eq!(v.relu().data(), &[0.0, 0.0, 2.0]);
        assert_eq!(Tensor::from_vec(vec![0.0]).sigmoid().data(), &[0.5]);
        let a = Tensor::from_vec(vec![1.0, 1.0]);
        let b = Tensor::from_vec(vec![0.0, 2.0]);
        assert_eq!(a.div_safe(&b, 1e-8).unwrap().data(), &[0.0, 0.5]);
    }

    #[test]
    fn outer_product() {
        let a = Tensor::from_vec(vec![1.0, 2.0]);
        let b = Tensor::from_vec(vec![3.0, 4.0, 5.0]);
        let out = Tensor::outer(&a, &b).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        assert_eq!(out.data(), &[3.0, 4.0, 5.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn concat_and_split_roundtrip() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![2, 3], vec![3.0, 4.0, 9.0, 7.0, 8.0, 9.5]).unwrap();
        let cat = Tensor::concat_cols(&a, &b).unwrap();
        assert_eq!(cat.shape(), &[2, 5]);
        let (l, r) = cat.split_cols(2).unwrap();
        assert_eq!(l, a);
        assert_eq!(r, b);
    }

    #[test]
    fn transpose_roundtrip() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = a.transpose().unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.transpose().unwrap(), a);
    }

    #[test]
    fn reshape_checks_numel() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(a.reshape(&[3, 2]).is_ok());
        assert!(a.reshape(&[4, 2]).is_err());
    }
}
