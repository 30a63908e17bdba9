//! Building blocks shared by the backbone, the stream encoder and the decoder.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::params::Bound;

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Exact (erf-based) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

/// Forward-pass mode. Dropout is only active in `Train`.
pub enum Mode<'a> {
    Eval,
    Train { dropout: f64, rng: &'a mut ChaCha8Rng },
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)`.
    pub fn dropout(&mut self, g: &mut Graph, x: Var) -> Var {
        match self {
            Mode::Eval => x,
            Mode::Train { dropout, rng } => {
                let p = *dropout;
                if p <= 0.0 {
                    return x;
                }
                let keep = 1.0 / (1.0 - p);
                let mask = Mat::from_shape_fn(g.shape(x), |_| {
                    if rng.gen::<f64>() < p {
                        0.0
                    } else {
                        keep
                    }
                });
                g.mul_const(x, mask)
            }
        }
    }
}

/// `x · W + b` using `{prefix}.weight` and `{prefix}.bias`.
pub fn linear(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{prefix}.weight"))?;
    let b = p.var(&format!("{prefix}.bias"))?;
    if g.shape(x).1 != g.shape(w).0 {
        return Err(Error::Shape(format!(
            "`{prefix}` expects {} input features, got {}",
            g.shape(w).0,
            g.shape(x).1
        )));
    }
    let xw = g.matmul(x, w);
    Ok(g.add_row(xw, b))
}

/// Row-wise layer norm with learnable affine `{prefix}.weight`, `{prefix}.bias`.
pub fn layer_norm(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let gain = p.var(&format!("{prefix}.weight"))?;
    let shift = p.var(&format!("{prefix}.bias"))?;
    let n = g.normalize_rows(x, LAYER_NORM_EPS);
    let scaled = g.mul_row(n, gain);
    Ok(g.add_row(scaled, shift))
}

/// Two-layer perceptron with an intermediate GELU: `fc2(drop(gelu(fc1(x))))`.
pub fn mlp(g: &mut Graph, p: &Bound, prefix: &str, x: Var, mode: &mut Mode) -> Result<Var> {
    let h = linear(g, p, &format!("{prefix}.fc1"), x)?;
    let h = g.gelu(h);
    let h = mode.dropout(g, h);
    linear(g, p, &format!("{prefix}.fc2"), h)
}

/// Multi-head scaled dot-product attention over already projected
/// `q (n_q × d)`, `k (n_k × d)`, `v (n_k × d)`. Returns `(n_q × d)`.
pub fn attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    mode: &mut Mode,
) -> Result<Var> {
    let d = g.shape(q).1;
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::HeadDivisibility { dim: d, heads });
    }
    if g.shape(k).1 != d || g.shape(v).1 != d || g.shape(k).0 != g.shape(v).0 {
        return Err(Error::Shape(format!(
            "attention operands disagree: q {:?}, k {:?}, v {:?}",
            g.shape(q),
            g.shape(k),
            g.shape(v)
        )));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh);
        let kh = g.slice_cols(k, h * dh, dh);
        let vh = g.slice_cols(v, h * dh, dh);
        let kt = g.transpose(kh);
        let scores = g.matmul(qh, kt);
        let scores = g.scale(scores, scale);
        let weights = g.softmax_rows(scores);
        let weights = mode.dropout(g, weights);
        outs.push(g.matmul(weights, vh));
    }
    Ok(if heads == 1 { outs[0] } else { g.concat_cols(&outs) })
}

/// Fixed 1-D sine/cosine encoding of `pos` into `dim` values.
/// Even slots carry `sin(pos·ω_k)`, odd slots `cos(pos·ω_k)`, `ω_k = 10000^(-2k/dim)`.
pub fn sincos_1d(pos: f64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let k = (i / 2) as f64;
            let omega = 1.0 / 10000f64.powf(2.0 * k / dim as f64);
            if i % 2 == 0 {
                (pos * omega).sin()
            } else {
                (pos * omega).cos()
            }
        })
        .collect()
}

/// Spatiotemporal encoding: the embedding is split into a time chunk and two
/// equal spatial chunks (`2·⌊d/6⌋` each), each filled by [`sincos_1d`].
pub fn sincos_3d(t: usize, row: usize, col: usize, dim: usize) -> Vec<f64> {
    let spatial = 2 * (dim / 6);
    let temporal = dim - 2 * spatial;
    let mut out = sincos_1d(t as f64, temporal);
    out.extend(sincos_1d(row as f64, spatial));
    out.extend(sincos_1d(col as f64, spatial));
    out
}
