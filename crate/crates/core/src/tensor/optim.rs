use super::dense::Tensor;
use crate::error::{Error, Result};

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(lr: f64, betas: (f64, f64), weight_decay: f64) -> Self {
        Self {
            lr,
            betas,
            eps: 1e-8,
            weight_decay,
            moments: Vec::new(),
        }
    }

    /// One update; `step` counts from 1. Parameters without `requires_grad`
    /// are skipped, trainable ones must carry a gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor], step: u64) -> Result<()> {
        if step == 0 {
            return Err(Error::contract("AdamW step index starts at 1"));
        }
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (vec![0.0; p.numel()], vec![0.0; p.numel()]))
                .collect();
        }
        if self.moments.len() != params.len() {
            return Err(Error::contract("AdamW parameter list changed between steps"));
        }
        let (b1, b2) = self.betas;
        let bc1 = 1.0 - b1.powi(step as i32);
        let bc2 = 1.0 - b2.powi(step as i32);
        for (idx, p) in params.iter_mut().enumerate() {
            if !p.requires_grad {
                continue;
            }
            let grad = p
                .grad
                .take()
                .ok_or_else(|| Error::contract(format!("parameter {idx} has no gradient")))?;
            let (m, v) = &mut self.moments[idx];
            let data = p.data_mut();
            for i in 0..data.len() {
                data[i] -= self.lr * self.weight_decay * data[i];
                m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of a single AdamW update with fresh moment state.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    lr: f64,
    betas: (f64, f64),
    weight_decay: f64,
    step: u64,
) -> Result<()> {
    AdamW::new(lr, betas, weight_decay).step(params, step)
}
