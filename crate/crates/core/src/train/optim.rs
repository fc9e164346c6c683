use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::{Param, ParamStore};
use crate::tensor::Tensor;

/// AdamW hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

impl AdamW {
    /// Updates one tensor in place. `step` is the 1-based count including this update.
    pub fn update(&self, w: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32], step: u64, lr: f32) {
        let c1 = 1.0 - (self.beta1 as f64).powf(step as f64);
        let c2 = 1.0 - (self.beta2 as f64).powf(step as f64);
        let lr = lr as f64;
        let keep = 1.0 - lr * self.weight_decay as f64;
        for i in 0..w.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = m[i] as f64 / c1;
            let v_hat = v[i] as f64 / c2;
            w[i] = (w[i] as f64 * keep - lr * m_hat / (v_hat.sqrt() + self.eps as f64)) as f32;
        }
    }
}

/// Applies one AdamW step to every parameter. `grads` is in store order.
pub fn adamw_step(params: &mut ParamStore, grads: &[Tensor], lr: f32, opt: &AdamW) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::shape("adamw", format!("{} gradients for {} parameters", grads.len(), params.len())));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        if p.value.dims() != g.dims() {
            return Err(Error::shape("adamw", format!("{}: {:?} vs {:?}", p.name, p.value.dims(), g.dims())));
        }
        p.step += 1;
        let Param { value, first_moment, second_moment, step, .. } = p;
        opt.update(value.data_mut(), g.data(), first_moment.data_mut(), second_moment.data_mut(), *step, lr);
    }
    Ok(())
}

/// `lr_end + ½(lr_start − lr_end)(1 + cos(π·step/total))`, clamped to the end of the schedule.
pub fn cosine_lr(step: usize, total: usize, lr_start: f32, lr_end: f32) -> Result<f32> {
    if total == 0 {
        return Err(Error::InvalidArgument("cosine schedule needs a positive step count".into()));
    }
    let t = step.min(total) as f64 / total as f64;
    Ok((lr_end as f64 + 0.5 * (lr_start as f64 - lr_end as f64) * (1.0 + (PI * t).cos())) as f32)
}
