//! AdamW with decoupled weight decay, and a cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// First/second moment buffers, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<T> {
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        Self {
            first: params.tensors().map(|t| vec![T::zero(); t.numel()]).collect(),
            second: params.tensors().map(|t| vec![T::zero(); t.numel()]).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One AdamW update: `p ← p − lr·wd·p`, then the bias-corrected Adam step.
pub fn adamw_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &[Vec<T>],
    state: &mut AdamWState<T>,
    cfg: &AdamWConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for ((p, g), m) in params.tensors().zip(grads).zip(&state.first) {
        if p.numel() != g.len() || p.numel() != m.len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "parameter {:?} vs gradient of {} elements",
                p.shape(),
                g.len()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let lr = T::from_f64_lossy(cfg.lr);
    let decay = T::one() - T::from_f64_lossy(cfg.lr * cfg.weight_decay);
    let (b1t, b2t) = (T::from_f64_lossy(b1), T::from_f64_lossy(b2));
    let (one_b1, one_b2) = (T::from_f64_lossy(1.0 - b1), T::from_f64_lossy(1.0 - b2));
    let (bc1, bc2) = (T::from_f64_lossy(bc1), T::from_f64_lossy(bc2));
    let eps = T::from_f64_lossy(cfg.eps);
    for (((p, g), m), v) in params
        .tensors_mut()
        .zip(grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g).zip(m).zip(v) {
            *mv = b1t * *mv + one_b1 * gv;
            *vv = b2t * *vv + one_b2 * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv = *pv * decay;
            let denom = v_hat.sqrt() + eps;
            if denom > T::zero() {
                *pv = *pv - lr * m_hat / denom;
            }
        }
    }
    Ok(())
}

/// `lr0 · ½ · (1 + cos(π · step / total))`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if step > total_steps || total_steps == 0 {
        return Err(AutodiffError::StepOutOfRange {
            step,
            total: total_steps,
        });
    }
    let frac = step as f64 / total_steps as f64;
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn single(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut p = single(0.7);
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        for _ in 0..5 {
            adamw_step(&mut p, &[vec![0.0]], &mut st, &cfg).unwrap();
        }
        assert_eq!(p.get("w").unwrap().data()[0], 0.7);
    }

    #[test]
    fn hand_evaluated_first_step() {
        let mut p = single(1.0);
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig {
            lr: 0.1,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            weight_decay: 0.0,
        };
        adamw_step(&mut p, &[vec![1.0]], &mut st, &cfg).unwrap();
        assert!((p.get("w").unwrap().data()[0] - 0.9).abs() < 1e-15);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn decoupled_decay_only() {
        let mut p = single(2.0);
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut expected = 2.0;
        for _ in 0..3 {
            adamw_step(&mut p, &[vec![0.0]], &mut st, &cfg).unwrap();
            expected *= 1.0 - 0.001;
            assert!((p.get("w").unwrap().data()[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn mismatched_gradient_rejected() {
        let mut p = single(1.0);
        let mut st = AdamWState::new(&p);
        let err = adamw_step(&mut p, &[vec![1.0, 2.0]], &mut st, &AdamWConfig::default());
        assert!(matches!(err, Err(AutodiffError::ShapeMismatch(_))));
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.5).unwrap(), 0.5);
        assert!(cosine_lr(100, 100, 0.5).unwrap().abs() < 1e-15);
        assert!((cosine_lr(50, 100, 0.5).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(
            cosine_lr(101, 100, 0.5),
            Err(AutodiffError::StepOutOfRange { .. })
        ));
    }
}
