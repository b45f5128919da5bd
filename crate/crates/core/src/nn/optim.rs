use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub lr_max: f64,
    #[serde(default = "default_warmup")]
    pub warmup_frac: f64,
    #[serde(default = "default_start_div")]
    pub start_div: f64,
    #[serde(default = "default_end_div")]
    pub end_div: f64,
}

fn default_warmup() -> f64 {
    0.3
}

fn default_start_div() -> f64 {
    25.0
}

fn default_end_div() -> f64 {
    1e4
}

impl OneCycle {
    pub fn new(lr_max: f64) -> Self {
        Self { lr_max, warmup_frac: default_warmup(), start_div: default_start_div(), end_div: default_end_div() }
    }

    pub fn lr(&self, step: usize, total: usize) -> Result<f64> {
        one_cycle_lr(step, total, self.lr_max, self.warmup_frac, self.start_div, self.end_div)
    }
}

fn cosine_interp(from: f64, to: f64, t: f64) -> f64 {
    to + (from - to) * (1.0 + (PI * t).cos()) / 2.0
}

/// Cosine warm-up from `lr_max / start_div` to `lr_max` over the first
/// `warmup_frac · total` steps, then cosine decay to `lr_max / end_div`.
pub fn one_cycle_lr(
    step: usize,
    total: usize,
    lr_max: f64,
    warmup_frac: f64,
    start_div: f64,
    end_div: f64,
) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("one-cycle schedule needs total > 0"));
    }
    if step > total {
        return Err(Error::invalid(format!("step {step} beyond total {total}")));
    }
    if !(0.0..=1.0).contains(&warmup_frac) || !(start_div > 0.0) || !(end_div > 0.0) {
        return Err(Error::invalid("bad one-cycle parameters"));
    }
    let warm = warmup_frac * total as f64;
    let s = step as f64;
    let (lr_start, lr_end) = (lr_max / start_div, lr_max / end_div);
    Ok(if s <= warm {
        if warm == 0.0 {
            lr_max
        } else {
            cosine_interp(lr_start, lr_max, s / warm)
        }
    } else {
        cosine_interp(lr_max, lr_end, (s - warm) / (total as f64 - warm))
    })
}

/// Step counter, schedule and momentum buffers of one training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: usize,
    pub total_steps: usize,
    pub schedule: OneCycle,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl TrainState {
    pub fn new(total_steps: usize, schedule: OneCycle, momentum: f64) -> Self {
        Self { step: 0, total_steps, schedule, momentum, velocity: Vec::new() }
    }

    pub fn lr(&self) -> Result<f64> {
        self.schedule.lr(self.step, self.total_steps)
    }

    /// `v <- momentum·v + g; p <- p - lr(step)·v`, then advances the step.
    /// Parameter blocks must arrive in the same order on every call.
    pub fn sgd_step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<f64> {
        let lr = self.lr()?;
        sgd_step(params, grads, &mut self.velocity, lr, self.momentum)?;
        self.step += 1;
        Ok(lr)
    }
}

pub fn sgd_step(
    params: Vec<&mut [f64]>,
    grads: Vec<&[f64]>,
    velocity: &mut Vec<Vec<f64>>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.iter().zip(&grads).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::shape("parameter and gradient blocks differ"));
    }
    if let Some(b) = grads.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::Divergence(format!("non-finite gradient in parameter block {b}")));
    }
    if velocity.is_empty() {
        *velocity = grads.iter().map(|g| vec![0.0; g.len()]).collect();
    }
    if velocity.len() != grads.len() {
        return Err(Error::shape("momentum buffers do not match parameters"));
    }
    for ((p, g), v) in params.into_iter().zip(grads).zip(velocity.iter_mut()) {
        for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = momentum * *vi + gi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}
