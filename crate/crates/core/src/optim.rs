//! AdamW with decoupled weight decay and a linear-warmup / cosine-decay
//! learning-rate schedule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GradientSet, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub max_steps: u64,
}

/// Learning rate at 0-based `step`.
///
/// Linear warmup `lr·(step+1)/warmup`, then half-cosine decay to zero at
/// `max_steps`; later steps stay at zero.
pub fn lr_at(step: u64, s: &Schedule) -> f64 {
    if step < s.warmup_steps {
        return s.base_lr * (step + 1) as f64 / s.warmup_steps as f64;
    }
    if step >= s.max_steps {
        return 0.0;
    }
    let progress = (step - s.warmup_steps) as f64 / (s.max_steps - s.warmup_steps) as f64;
    s.base_lr * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step_count: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &Parameters) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.2.len()).collect();
        Self {
            step_count: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One AdamW update of `params` in place.
///
/// Weight decay `p ← p·(1 − lr·wd)` touches linear weights only; biases,
/// layer-norm affines, metadata vectors and the temperature are not decayed.
pub fn adamw_step(
    params: &mut Parameters,
    grads: &GradientSet,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient(name));
    }
    let g_tensors = grads.0.tensors();
    let mut p_tensors = params.tensors_mut();
    if g_tensors.len() != p_tensors.len() || state.first.len() != p_tensors.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter tensors, {} gradients, {} moment buffers",
            p_tensors.len(),
            g_tensors.len(),
            state.first.len()
        )));
    }
    for (k, (p, g)) in p_tensors.iter().zip(&g_tensors).enumerate() {
        if p.1.len() != g.2.len() || state.first[k].len() != p.1.len() {
            return Err(Error::ShapeMismatch(format!("tensor {} size differs", g.0)));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = cfg.betas;
    let bc1 = 1.0 - libm::pow(b1, f64::from(t));
    let bc2 = 1.0 - libm::pow(b2, f64::from(t));
    for (k, ((kind, p), g)) in p_tensors.iter_mut().zip(&g_tensors).enumerate() {
        let decay = if kind.decays() { lr * cfg.weight_decay } else { 0.0 };
        let m = &mut state.first[k];
        let v = &mut state.second[k];
        for j in 0..p.len() {
            let gj = g.2[j];
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= decay * p[j];
            p[j] -= lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AlignmentModel, ModelConfig};

    fn sched() -> Schedule {
        Schedule {
            base_lr: 1e-4,
            warmup_steps: 4000,
            max_steps: 24000,
        }
    }

    #[test]
    fn schedule_landmarks() {
        let s = sched();
        assert_eq!(lr_at(4000, &s), 1e-4);
        assert_eq!(lr_at(24000, &s), 0.0);
        assert_eq!(lr_at(30000, &s), 0.0);
        assert!((lr_at(14000, &s) - 5e-5).abs() < 1e-18);
        assert!((lr_at(0, &s) - 1e-4 / 4000.0).abs() < 1e-20);
        assert!((lr_at(3999, &s) - 1e-4).abs() < 1e-20);
    }

    fn tiny_model() -> AlignmentModel {
        AlignmentModel::new(ModelConfig {
            hidden_layers: 1,
            hidden_dim: 4,
            shared_dim: 3,
            ..ModelConfig::new(2, 2)
        })
        .unwrap()
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let mut m = tiny_model();
        let before = m.params.clone();
        let g = GradientSet::zeros(&m);
        let mut st = OptimizerState::new(&m.params);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut m.params, &g, &mut st, 1e-3, &cfg).unwrap();
        assert_eq!(m.params, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut m = tiny_model();
        let before = m.params.clone();
        let mut g = GradientSet::zeros(&m);
        let grads = [0.5, -2.0, 1e-3, -7.0];
        for (k, v) in g.0.head_mol.output.bias.iter_mut().enumerate() {
            *v = grads[k];
        }
        g.0.log_temperature = -0.25;
        let mut st = OptimizerState::new(&m.params);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            eps: 0.0,
            ..AdamWConfig::default()
        };
        let lr = 0.01;
        adamw_step(&mut m.params, &g, &mut st, lr, &cfg).unwrap();
        for k in 0..3 {
            let delta = m.params.head_mol.output.bias[k] - before.head_mol.output.bias[k];
            assert!((delta + lr * grads[k].signum()).abs() < 1e-12);
        }
        let dt = m.params.log_temperature - before.log_temperature;
        assert!((dt - lr).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_only_on_weights() {
        let mut m = tiny_model();
        m.params.head_ms.output.bias.iter_mut().for_each(|b| *b = 1.0);
        let before = m.params.clone();
        let g = GradientSet::zeros(&m);
        let mut st = OptimizerState::new(&m.params);
        adamw_step(&mut m.params, &g, &mut st, 0.1, &AdamWConfig::default()).unwrap();
        assert_eq!(m.params.head_ms.output.bias, before.head_ms.output.bias);
        assert_eq!(m.params.log_temperature, before.log_temperature);
        assert_eq!(m.params.meta, before.meta);
        let w0 = before.head_ms.output.weight[0];
        assert!((m.params.head_ms.output.weight[0] - w0 * (1.0 - 0.1 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut m = tiny_model();
        let mut g = GradientSet::zeros(&m);
        g.0.head_ms.output.weight[0] = f64::NAN;
        let mut st = OptimizerState::new(&m.params);
        let before = m.params.clone();
        let r = adamw_step(&mut m.params, &g, &mut st, 0.1, &AdamWConfig::default());
        assert!(matches!(r, Err(Error::NonFiniteGradient(_))));
        assert_eq!(m.params, before);
    }

    #[test]
    fn quadratic_descent_monotone() {
        // f(x) = (x - 3)² on the temperature scalar
        let mut m = tiny_model();
        m.params.log_temperature = -2.0;
        let mut st = OptimizerState::new(&m.params);
        let cfg = AdamWConfig::default();
        let f = |x: f64| (x - 3.0) * (x - 3.0);
        let mut values = Vec::new();
        for _ in 0..10 {
            let x = m.params.log_temperature;
            values.push(f(x));
            let mut g = GradientSet::zeros(&m);
            g.0.log_temperature = 2.0 * (x - 3.0);
            adamw_step(&mut m.params, &g, &mut st, 0.1, &cfg).unwrap();
        }
        values.push(f(m.params.log_temperature));
        for w in values[2..].windows(2) {
            assert!(w[1] < w[0], "{values:?}");
        }
    }
}
