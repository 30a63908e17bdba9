//! Named parameter arrays.
//!
//! Every trainable component stores its weights in a [`ParamSet`], an ordered
//! map from dotted names to matrices. Weight sharing is expressed by name:
//! layers that share a transform look up the same key, so the array exists
//! exactly once in memory and in checkpoints.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Grads, Mat, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    arrays: BTreeMap<String, Mat>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        self.arrays.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Mat> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Mat> {
        self.arrays
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.arrays.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Mat)> {
        self.arrays.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(String::as_str)
    }

    pub fn num_scalars(&self) -> usize {
        self.arrays.values().map(|m| m.len()).sum()
    }

    /// Errors unless `other` has the same names with the same shapes.
    pub fn check_same_layout(&self, other: &ParamSet) -> Result<()> {
        if self.arrays.len() != other.arrays.len() {
            return Err(Error::Shape(format!(
                "parameter sets differ in size: {} vs {}",
                self.arrays.len(),
                other.arrays.len()
            )));
        }
        for (name, a) in &self.arrays {
            let b = other.get(name)?;
            if a.dim() != b.dim() {
                return Err(Error::Shape(format!(
                    "parameter `{name}`: {:?} vs {:?}",
                    a.dim(),
                    b.dim()
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 over names, shapes, and little-endian element bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, m) in &self.arrays {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((m.nrows() as u64).to_le_bytes());
            h.update((m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.values().all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// Registers every array as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let vars = self
            .arrays
            .iter()
            .map(|(k, v)| (k.clone(), g.leaf(v.clone())))
            .collect();
        Bound { vars }
    }
}

/// Name → graph node mapping produced by [`ParamSet::bind`].
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Collects the gradient of every bound parameter; parameters the loss
    /// does not depend on get zeros.
    pub fn gradients(&self, grads: &Grads, params: &ParamSet) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, &v) in &self.vars {
            let shape = params.arrays[name].dim();
            out.insert(name.clone(), grads.get_or_zeros(v, shape));
        }
        out
    }
}

/// Seeded initialiser used by every component.
pub struct Initializer<'a> {
    rng: &'a mut ChaCha8Rng,
}

impl<'a> Initializer<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng) -> Self {
        Self { rng }
    }

    pub fn normal(&mut self, shape: (usize, usize), std: f64) -> Mat {
        let dist = Normal::new(0.0, std).expect("finite std");
        Mat::from_shape_fn(shape, |_| dist.sample(self.rng))
    }

    pub fn uniform(&mut self, shape: (usize, usize), lo: f64, hi: f64) -> Mat {
        Mat::from_shape_fn(shape, |_| self.rng.gen_range(lo..hi))
    }

    /// `{prefix}.weight` with std `1/sqrt(fan_in)` and a zero `{prefix}.bias`.
    pub fn linear(&mut self, set: &mut ParamSet, prefix: &str, fan_in: usize, fan_out: usize) {
        let std = 1.0 / (fan_in as f64).sqrt();
        set.insert(format!("{prefix}.weight"), self.normal((fan_in, fan_out), std));
        set.insert(format!("{prefix}.bias"), Mat::zeros((1, fan_out)));
    }

    pub fn zero_linear(&mut self, set: &mut ParamSet, prefix: &str, fan_in: usize, fan_out: usize) {
        set.insert(format!("{prefix}.weight"), Mat::zeros((fan_in, fan_out)));
        set.insert(format!("{prefix}.bias"), Mat::zeros((1, fan_out)));
    }

    pub fn layer_norm(&mut self, set: &mut ParamSet, prefix: &str, dim: usize) {
        set.insert(format!("{prefix}.weight"), Mat::ones((1, dim)));
        set.insert(format!("{prefix}.bias"), Mat::zeros((1, dim)));
    }
}

/// Whether AdamW applies decoupled weight decay to this parameter.
/// Linear weights decay; biases, norm affines and embeddings do not.
pub fn decays(name: &str) -> bool {
    name.ends_with(".weight") && !name.contains("norm")
}
