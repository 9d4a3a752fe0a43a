//! Adam with bias correction and the cosine-annealing learning-rate schedule.

use super::error::{NumError, Result};
use super::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for every parameter of one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |_| Vec::new();
        let mut s = Self {
            config,
            step: 0,
            first: (0..store.len()).map(zeros).collect(),
            second: (0..store.len()).map(zeros).collect(),
        };
        for (id, e) in store.iter() {
            s.first[id.index()] = vec![0.0; e.tensor.numel()];
            s.second[id.index()] = vec![0.0; e.tensor.numel()];
        }
        s
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, index: usize) -> (&[f64], &[f64]) {
        (&self.first[index], &self.second[index])
    }

    /// Applies one update to every non-frozen parameter holding a gradient.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(NumError::Invalid(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        self.step += 1;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if store.entry(id).frozen {
                continue;
            }
            let t = store.get_mut(id);
            let Some(grad) = t.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let i = id.index();
            adam_update(
                t.data_mut(),
                &grad,
                &mut self.first[i],
                &mut self.second[i],
                self.step,
                &self.config,
                lr,
            )?;
        }
        Ok(())
    }
}

/// One Adam update of a flat parameter buffer at 1-based step `t`.
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != m.len() || param.len() != v.len() {
        return Err(NumError::ShapeMismatch {
            op: "adam_step",
            left: vec![param.len()],
            right: vec![grad.len()],
        });
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    if param.iter().any(|p| !p.is_finite()) {
        return Err(NumError::NonFinite { op: "adam_step" });
    }
    Ok(())
}

/// Single-phase cosine annealing, held at `eta_min` once `step >= t_max`.
pub fn cosine_annealing_lr(step: usize, t_max: usize, base_lr: f64, eta_min: f64) -> f64 {
    let t_max = t_max.max(1);
    let progress = step.min(t_max) as f64 / t_max as f64;
    eta_min + (base_lr - eta_min) * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0
}
