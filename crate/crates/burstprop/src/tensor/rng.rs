use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Purpose-separated random streams so that, e.g., changing how many weights a
/// model draws never perturbs the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Weights,
    Data,
    Shuffle,
    Tests,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Weights => 1,
            Stream::Data => 2,
            Stream::Shuffle => 3,
            Stream::Tests => 4,
        }
    }
}

/// Deterministic 64-bit-seeded generator (ChaCha8). Identical seeds and
/// streams yield identical sequences on every platform: all derived values
/// are produced by fixed integer/bit arithmetic on `next_u64`.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn seeded(seed: u64, stream: Stream) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream.id());
        Rng { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform f64 in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform f64 in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n) via the widening-multiply reduction.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller (the second variate is discarded so the
    /// draw count stays one-to-one with calls).
    pub fn normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| self.uniform(lo, hi)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape/data length agree by construction")
    }

    pub fn normal_tensor(&mut self, shape: &[usize], std: f64) -> Tensor {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| self.normal() * std).collect();
        Tensor::new(shape.to_vec(), data).expect("shape/data length agree by construction")
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
