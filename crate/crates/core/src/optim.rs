//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{decays, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: ParamSet,
    second: ParamSet,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            first: ParamSet::new(),
            second: ParamSet::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every array in `grads` against the same-named array in
    /// `params`. Names in `params` without a gradient are left untouched.
    ///
    /// `p ← p − lr·wd·p − lr·m̂/(√v̂ + ε)` for decaying arrays.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64, wd: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let AdamWConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (name, g) in grads.iter() {
            let p = params.get_mut(name)?;
            if p.dim() != g.dim() {
                return Err(Error::Shape(format!(
                    "gradient for `{name}` is {:?}, parameter is {:?}",
                    g.dim(),
                    p.dim()
                )));
            }
            if !self.first.contains(name) {
                self.first.insert(name.clone(), g.mapv(|_| 0.0));
                self.second.insert(name.clone(), g.mapv(|_| 0.0));
            }
            let m = self.first.get_mut(name)?;
            m.zip_mut_with(g, |m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
            let v = self.second.get_mut(name)?;
            v.zip_mut_with(g, |v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
            let m = self.first.get(name)?;
            let v = self.second.get(name)?;
            let decay = if decays(name) { lr * wd } else { 0.0 };
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p -= decay * *p + lr * mhat / (vhat.sqrt() + eps);
            });
        }
        Ok(())
    }
}
