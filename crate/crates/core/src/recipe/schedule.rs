//! Learning-rate and weight-decay schedules.
//!
//! Learning rate: linear warmup from `lr_start` to `lr_max` over
//! `warmup_epochs`, then a cosine from `lr_max` towards `lr_end`. Weight decay:
//! a cosine from `wd_start` to `wd_end` with no warmup. Both cosines are
//! stretched by `stretch` and evaluated only over the real steps, so with
//! `stretch = 1.25` the final step sits at 80% of the cosine period.
//!
//! Endpoint convention: the cosine phase at segment position `j` of `R` steps
//! is `j / ((R − 1)·stretch)`, so `stretch = 1` lands exactly on the end value
//! at the last step.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub lr_start: f64,
    pub lr_max: f64,
    pub lr_end: f64,
    pub wd_start: f64,
    pub wd_end: f64,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    pub stretch: f64,
}

fn default_warmup() -> usize {
    1
}

impl ScheduleSpec {
    /// Step 2 on HeiCo: 25 epochs × 50,000 samples, lr 1e-3 → 1e-3 → 0,
    /// wd 1e-2 → 1e-6, no stretch.
    pub fn heico_step2() -> Self {
        Self {
            epochs: 25,
            samples_per_epoch: 50_000,
            lr_start: 1e-3,
            lr_max: 1e-3,
            lr_end: 0.0,
            wd_start: 1e-2,
            wd_end: 1e-6,
            warmup_epochs: 1,
            stretch: 1.0,
        }
    }

    /// Step 2 on in-house data: 25 × 1000, lr 1e-5 → 1e-3 → 0, wd 1e-2 constant, stretch 125%.
    pub fn inhouse_step2() -> Self {
        Self {
            epochs: 25,
            samples_per_epoch: 1000,
            lr_start: 1e-5,
            lr_max: 1e-3,
            lr_end: 0.0,
            wd_start: 1e-2,
            wd_end: 1e-2,
            warmup_epochs: 1,
            stretch: 1.25,
        }
    }

    /// Steps 3 and 4, every dataset: 10 × 1000, lr 1e-6 → 1e-4 → 0, wd 1e-4, stretch 125%.
    pub fn steps34() -> Self {
        Self {
            epochs: 10,
            samples_per_epoch: 1000,
            lr_start: 1e-6,
            lr_max: 1e-4,
            lr_end: 0.0,
            wd_start: 1e-4,
            wd_end: 1e-4,
            warmup_epochs: 1,
            stretch: 1.25,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "heico-step2" => Some(Self::heico_step2()),
            "inhouse-step2" => Some(Self::inhouse_step2()),
            "steps34" => Some(Self::steps34()),
            _ => None,
        }
    }

    /// Finetuning schedule derived from a pretraining one: learning rates
    /// divided by 100, weight decay by 10.
    pub fn finetune_from(pretrain: &ScheduleSpec) -> Self {
        Self {
            lr_start: pretrain.lr_start / 100.0,
            lr_max: pretrain.lr_max / 100.0,
            lr_end: pretrain.lr_end / 100.0,
            wd_start: pretrain.wd_start / 10.0,
            wd_end: pretrain.wd_end / 10.0,
            ..*pretrain
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.samples_per_epoch == 0 {
            return Err(Error::InvalidArgument("schedule needs ≥1 epoch and ≥1 sample per epoch".into()));
        }
        if [self.lr_start, self.lr_max, self.lr_end, self.wd_start, self.wd_end]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidArgument("rates must be finite and non-negative".into()));
        }
        if !(self.stretch >= 1.0 && self.stretch.is_finite()) {
            return Err(Error::InvalidArgument(format!("stretch {} must be ≥ 1", self.stretch)));
        }
        Ok(())
    }

    /// Optimizer steps per epoch at the given batch size (rounded up).
    pub fn steps_per_epoch(&self, batch_size: usize) -> usize {
        self.samples_per_epoch.div_ceil(batch_size.max(1))
    }

    pub fn total_steps(&self, batch_size: usize) -> usize {
        self.epochs * self.steps_per_epoch(batch_size)
    }

    pub fn warmup_steps(&self, total_steps: usize) -> usize {
        (self.warmup_epochs * total_steps / self.epochs).min(total_steps)
    }
}

fn check_index(step_index: usize, total_steps: usize) -> Result<()> {
    if step_index >= total_steps {
        return Err(Error::InvalidArgument(format!(
            "step {step_index} outside schedule of {total_steps} steps"
        )));
    }
    Ok(())
}

/// Half-cosine from `from` to `to`, at position `j` of a `len`-step segment.
fn cosine(from: f64, to: f64, j: usize, len: usize, stretch: f64) -> f64 {
    let phase = if len > 1 {
        j as f64 / ((len - 1) as f64 * stretch)
    } else {
        0.0
    };
    to + (from - to) * 0.5 * (1.0 + (PI * phase).cos())
}

pub fn lr_at(step_index: usize, total_steps: usize, spec: &ScheduleSpec) -> Result<f64> {
    check_index(step_index, total_steps)?;
    let warmup = spec.warmup_steps(total_steps);
    if step_index < warmup {
        let frac = step_index as f64 / warmup as f64;
        return Ok(spec.lr_start + (spec.lr_max - spec.lr_start) * frac);
    }
    Ok(cosine(
        spec.lr_max,
        spec.lr_end,
        step_index - warmup,
        total_steps - warmup,
        spec.stretch,
    ))
}

pub fn wd_at(step_index: usize, total_steps: usize, spec: &ScheduleSpec) -> Result<f64> {
    check_index(step_index, total_steps)?;
    Ok(cosine(spec.wd_start, spec.wd_end, step_index, total_steps, spec.stretch))
}
