//! Weighted binary cross-entropy with its analytic derivative, and Adam with
//! decoupled weight decay. The same optimizer consumes burst pseudo-gradients
//! and backprop gradients alike.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weighted binary cross-entropy settings. `pos_weight = None` means "use the
/// negative/positive ratio recorded in the dataset manifest".
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightedBceConfig {
    pub pos_weight: Option<f64>,
    pub eps_log: f64,
}

impl Default for WeightedBceConfig {
    fn default() -> Self {
        WeightedBceConfig {
            pos_weight: None,
            eps_log: 1e-7,
        }
    }
}

impl WeightedBceConfig {
    pub fn with_pos_weight(pos_weight: f64) -> Self {
        WeightedBceConfig {
            pos_weight: Some(pos_weight),
            eps_log: 1e-7,
        }
    }

    /// Concrete positive-class weight, falling back to the dataset's ratio.
    pub fn resolve_pos_weight(&self, dataset_pos_weight: f64) -> f64 {
        self.pos_weight.unwrap_or(dataset_pos_weight)
    }
}

fn check_pair(probs: &Tensor, targets: &Tensor, op: &'static str) -> Result<()> {
    if probs.shape() != targets.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: probs.shape().to_vec(),
            rhs: targets.shape().to_vec(),
        });
    }
    Ok(())
}

/// `-mean[ pos_weight * y * ln p + (1 - y) * ln(1 - p) ]` with probabilities
/// clamped to `[eps_log, 1 - eps_log]` before the logs.
pub fn wbce_loss(probs: &Tensor, targets: &Tensor, pos_weight: f64, eps_log: f64) -> Result<f64> {
    check_pair(probs, targets, "wbce_loss")?;
    let mut acc = 0.0;
    for (&p, &y) in probs.data().iter().zip(targets.data()) {
        let p = p.clamp(eps_log, 1.0 - eps_log);
        acc += pos_weight * y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(-acc / probs.numel() as f64)
}

/// Elementwise derivative of [`wbce_loss`] with respect to the probabilities:
/// `(-pos_weight * y / p + (1 - y) / (1 - p)) / numel`.
pub fn wbce_grad(probs: &Tensor, targets: &Tensor, pos_weight: f64, eps_log: f64) -> Result<Tensor> {
    check_pair(probs, targets, "wbce_grad")?;
    let n = probs.numel() as f64;
    let data = probs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&p, &y)| {
            let p = p.clamp(eps_log, 1.0 - eps_log);
            (-pos_weight * y / p + (1.0 - y) / (1.0 - p)) / n
        })
        .collect();
    Tensor::new(probs.shape().to_vec(), data)
}

/// Adam hyperparameters. `weight_decay` is decoupled: parameters are shrunk
/// multiplicatively before the moment-based delta is applied.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

/// Per-parameter moment state.
#[derive(Debug, Clone)]
pub struct AdamSlot {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

/// Adam optimizer with one slot per named parameter. Slots are created lazily
/// on first update, so the parameter set never has to be declared up front.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    slots: BTreeMap<String, AdamSlot>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            slots: BTreeMap::new(),
        }
    }

    pub fn slot(&self, name: &str) -> Option<&AdamSlot> {
        self.slots.get(name)
    }

    pub fn slots(&self) -> impl Iterator<Item = (&String, &AdamSlot)> {
        self.slots.iter()
    }

    pub fn restore_slot(&mut self, name: String, slot: AdamSlot) {
        self.slots.insert(name, slot);
    }

    /// One bias-corrected Adam step on `param`.
    pub fn step(&mut self, name: &str, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: param.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        let slot = self.slots.entry(name.to_string()).or_insert_with(|| AdamSlot {
            m: Tensor::zeros(param.shape()),
            v: Tensor::zeros(param.shape()),
            step: 0,
        });
        if slot.m.shape() != param.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: slot.m.shape().to_vec(),
                rhs: param.shape().to_vec(),
            });
        }
        slot.step += 1;
        let t = slot.step as i32;
        let cfg = &self.cfg;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let decay = 1.0 - cfg.lr * cfg.weight_decay;

        let pd = param.data_mut();
        let md = slot.m.data_mut();
        let vd = slot.v.data_mut();
        for i in 0..pd.len() {
            let g = grad.data()[i];
            pd[i] *= decay;
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * g;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Rng, Stream};

    #[test]
    fn loss_zero_when_probs_match_targets() {
        let y = Tensor::from_vec(vec![1.0, 0.0, 1.0, 0.0]);
        let loss = wbce_loss(&y, &y, 1.0, 1e-7).unwrap();
        assert!(loss.abs() <= 1e-6, "loss {loss}");
    }

    #[test]
    fn loss_ln2_at_half_probs() {
        let p = Tensor::from_vec(vec![0.5; 4]);
        let y = Tensor::from_vec(vec![1.0, 0.0, 1.0, 0.0]);
        let loss = wbce_loss(&p, &y, 1.0, 1e-7).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn pos_weight_scales_positive_terms() {
        let mut rng = Rng::seeded(4, Stream::Tests);
        let p = rng.uniform_tensor(&[8], 0.1, 0.9);
        let y = Tensor::from_vec(vec![1.0; 8]);
        let l1 = wbce_loss(&p, &y, 1.0, 1e-7).unwrap();
        let l2 = wbce_loss(&p, &y, 2.0, 1e-7).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn grad_closed_forms() {
        let p = Tensor::from_vec(vec![0.5]);
        let pos = wbce_grad(&p, &Tensor::from_vec(vec![1.0]), 1.0, 1e-7).unwrap();
        assert!((pos.data()[0] - (-2.0)).abs() < 1e-12);
        let neg = wbce_grad(&p, &Tensor::from_vec(vec![0.0]), 1.0, 1e-7).unwrap();
        assert!((neg.data()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn grad_matches_central_differences() {
        let mut rng = Rng::seeded(12, Stream::Tests);
        let pw = 3.5;
        for _ in 0..20 {
            let p = rng.uniform_tensor(&[6], 0.05, 0.95);
            let y = Tensor::from_vec((0..6).map(|_| (rng.below(2)) as f64).collect());
            let grad = wbce_grad(&p, &y, pw, 1e-7).unwrap();
            let h = 1e-6;
            for i in 0..6 {
                let mut up = p.clone();
                up.data_mut()[i] += h;
                let mut dn = p.clone();
                dn.data_mut()[i] -= h;
                let fd = (wbce_loss(&up, &y, pw, 1e-7).unwrap()
                    - wbce_loss(&dn, &y, pw, 1e-7).unwrap())
                    / (2.0 * h);
                assert!((fd - grad.data()[i]).abs() < 1e-6, "i={i}");
            }
        }
    }

    #[test]
    fn adam_zero_grad_zero_decay_is_identity() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut opt = Adam::new(cfg);
        let mut p = Tensor::from_vec(vec![1.5, -0.5]);
        let before = p.clone();
        opt.step("p", &mut p, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut opt = Adam::new(cfg);
        let mut p = Tensor::from_vec(vec![0.0, 0.0]);
        let g = Tensor::from_vec(vec![1.0, -2.0]);
        opt.step("p", &mut p, &g).unwrap();
        // bias correction makes m_hat / sqrt(v_hat) = sign(g) up to eps
        assert!((p.data()[0] + cfg.lr).abs() < 1e-8);
        assert!((p.data()[1] - cfg.lr).abs() < 1e-8);
    }

    #[test]
    fn decay_only_shrinks_geometrically() {
        let cfg = AdamConfig::default();
        let mut opt = Adam::new(cfg);
        let mut p = Tensor::from_vec(vec![2.0]);
        let zero = Tensor::zeros(&[1]);
        let factor = 1.0 - cfg.lr * cfg.weight_decay;
        let mut expect = 2.0;
        for _ in 0..5 {
            opt.step("p", &mut p, &zero).unwrap();
            expect *= factor;
            assert!((p.data()[0] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_scalar_hand_trace_for_ten_steps() {
        let cfg = AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        };
        let mut opt = Adam::new(cfg);
        let mut p = Tensor::from_vec(vec![0.7]);
        let grads = [0.3, -0.1, 0.25, 0.0, -0.4, 0.9, 0.05, -0.2, 0.6, -0.8];

        // independent scalar recurrence
        let (mut x, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
        for (t, &g) in grads.iter().enumerate() {
            opt.step("p", &mut p, &Tensor::from_vec(vec![g])).unwrap();
            x *= 1.0 - cfg.lr * cfg.weight_decay;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let m_hat = m / (1.0 - cfg.beta1.powi(t as i32 + 1));
            let v_hat = v / (1.0 - cfg.beta2.powi(t as i32 + 1));
            x -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            assert!((p.data()[0] - x).abs() < 1e-12, "step {t}");
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut opt = Adam::new(AdamConfig::default());
        let mut p = Tensor::zeros(&[2]);
        assert!(opt.step("p", &mut p, &Tensor::zeros(&[3])).is_err());
    }
}
