//! AdamW with decoupled weight decay, and the warmup + cosine schedule.

use super::{Tensor, TensorError};

/// AdamW hyperparameters. Defaults follow the CLIP-family convention:
/// beta2 = 0.98, eps = 1e-6, desk-scale weight decay 0.1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay: 0.1,
        }
    }
}

/// Per-parameter first/second moment buffers plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: u64,
}

impl AdamW {
    /// Zero-initialized state matching the given parameter shapes.
    pub fn new(cfg: AdamWConfig, param_sizes: &[usize]) -> AdamW {
        AdamW {
            cfg,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. Weight decay is decoupled: it scales the parameter
    /// directly instead of being folded into the gradient. A non-finite
    /// gradient aborts with the offending parameter's name.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        names: &[String],
        grads: &[Tensor],
        lr: f32,
    ) -> Result<(), TensorError> {
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.cfg.beta1.powi(t);
        let bias2 = 1.0 - self.cfg.beta2.powi(t);
        for (idx, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            if grad.data().iter().any(|g| !g.is_finite()) {
                return Err(TensorError::NonFinite {
                    what: "gradient",
                    name: names.get(idx).cloned().unwrap_or_else(|| format!("param{idx}")),
                });
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let decay = 1.0 - lr * self.cfg.weight_decay;
            for ((p, &g), (mi, vi)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.cfg.beta1 * *mi + (1.0 - self.cfg.beta1) * g;
                *vi = self.cfg.beta2 * *vi + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *p = *p * decay - lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup from zero to `max_lr`, then cosine decay to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    max_lr: f32,
    warmup_steps: u32,
    total_steps: u32,
}

impl Schedule {
    pub fn new(max_lr: f32, warmup_steps: u32, total_steps: u32) -> Result<Schedule, TensorError> {
        if warmup_steps >= total_steps {
            return Err(TensorError::ScheduleConfig {
                warmup: warmup_steps,
                total: total_steps,
            });
        }
        Ok(Schedule {
            max_lr,
            warmup_steps,
            total_steps,
        })
    }

    pub fn total_steps(&self) -> u32 {
        self.total_steps
    }

    pub fn lr_at(&self, step: u32) -> Result<f32, TensorError> {
        if step > self.total_steps {
            return Err(TensorError::ScheduleStep {
                step,
                total: self.total_steps,
            });
        }
        if step <= self.warmup_steps {
            if self.warmup_steps == 0 {
                return Ok(self.max_lr);
            }
            return Ok(self.max_lr * step as f32 / self.warmup_steps as f32);
        }
        let progress =
            (step - self.warmup_steps) as f32 / (self.total_steps - self.warmup_steps) as f32;
        Ok(self.max_lr * 0.5 * (1.0 + (std::f32::consts::PI * progress).cos()))
    }
}
