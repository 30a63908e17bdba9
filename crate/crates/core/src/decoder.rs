//! Attentive classifier head.
//!
//! A learned query cross-attends over the layer-normed state tokens, passes
//! through a residual perceptron block, and a final linear map produces the
//! class logits.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::nn::{self, Mode};
use crate::params::{Bound, Initializer, ParamSet};
use crate::tokens::StateVector;

pub const HEICO_PHASES: usize = 14;
pub const BINARY_OUTCOME: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub num_classes: usize,
    /// Number of learned queries; their outputs are averaged before the head.
    pub queries: usize,
    /// Number of stacked cross-attention blocks.
    pub depth: usize,
    pub mlp_ratio: usize,
    pub seed: u64,
}

impl DecoderConfig {
    pub fn new(embed_dim: usize, heads: usize, num_classes: usize, seed: u64) -> Self {
        Self {
            embed_dim,
            heads,
            num_classes,
            queries: 1,
            depth: 1,
            mlp_ratio: 2,
            seed,
        }
    }
}

/// Class scores for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logits {
    pub values: Array1<f64>,
}

impl Logits {
    pub fn num_classes(&self) -> usize {
        self.values.len()
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentiveClassifier {
    pub config: DecoderConfig,
    pub params: ParamSet,
}

impl AttentiveClassifier {
    pub fn new(config: DecoderConfig) -> Result<Self> {
        let d = config.embed_dim;
        if config.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {}",
                config.num_classes
            )));
        }
        if config.heads == 0 || !d.is_multiple_of(config.heads) {
            return Err(Error::HeadDivisibility {
                dim: d,
                heads: config.heads,
            });
        }
        if config.queries == 0 || config.depth == 0 {
            return Err(Error::InvalidArgument("decoder needs ≥1 query and ≥1 block".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut init = Initializer::new(&mut rng);
        let mut p = ParamSet::new();
        p.insert("query", init.normal((config.queries, d), 0.02));
        for b in 0..config.depth {
            let pre = format!("blocks.{b}");
            init.layer_norm(&mut p, &format!("{pre}.norm_kv"), d);
            for proj in ["q", "k", "v", "proj"] {
                init.linear(&mut p, &format!("{pre}.xattn.{proj}"), d, d);
            }
            init.layer_norm(&mut p, &format!("{pre}.norm_mlp"), d);
            init.linear(&mut p, &format!("{pre}.mlp.fc1"), d, d * config.mlp_ratio);
            init.linear(&mut p, &format!("{pre}.mlp.fc2"), d * config.mlp_ratio, d);
        }
        init.linear(&mut p, "head", d, config.num_classes);
        Ok(Self { config, params: p })
    }

    pub fn digest(&self) -> String {
        self.params.digest()
    }

    /// Logit row `(1 × C)` on a caller-owned graph.
    pub fn forward_graph(&self, g: &mut Graph, p: &Bound, state: Var) -> Result<Var> {
        let d = self.config.embed_dim;
        if g.shape(state).1 != d {
            return Err(Error::Shape(format!(
                "decoder expects width {d}, state has {}",
                g.shape(state).1
            )));
        }
        let mut mode = Mode::Eval;
        let mut x = p.var("query")?;
        for b in 0..self.config.depth {
            let pre = format!("blocks.{b}");
            let kv = nn::layer_norm(g, p, &format!("{pre}.norm_kv"), state)?;
            let q = nn::linear(g, p, &format!("{pre}.xattn.q"), x)?;
            let k = nn::linear(g, p, &format!("{pre}.xattn.k"), kv)?;
            let v = nn::linear(g, p, &format!("{pre}.xattn.v"), kv)?;
            let a = nn::attention(g, q, k, v, self.config.heads, &mut mode)?;
            let a = nn::linear(g, p, &format!("{pre}.xattn.proj"), a)?;
            x = g.add(x, a);
            let h = nn::layer_norm(g, p, &format!("{pre}.norm_mlp"), x)?;
            let m = nn::mlp(g, p, &format!("{pre}.mlp"), h, &mut mode)?;
            x = g.add(x, m);
        }
        if self.config.queries > 1 {
            x = g.mean_rows(x);
        }
        nn::linear(g, p, "head", x)
    }

    pub fn classify(&self, state: &StateVector) -> Result<Logits> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let s = g.leaf(state.tokens.clone());
        let out = self.forward_graph(&mut g, &p, s)?;
        let values = g.value(out).row(0).to_owned();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite logits".into()));
        }
        Ok(Logits { values })
    }
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &Logits, label: usize) -> Result<f64> {
    let c = logits.num_classes();
    if label >= c {
        return Err(Error::InvalidArgument(format!("label {label} out of range for {c} classes")));
    }
    let max = logits.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.values.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    Ok(lse - logits.values[label])
}

/// Mean cross-entropy over a batch.
pub fn batch_cross_entropy(batch: &[(Logits, usize)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("cross-entropy over an empty batch".into()));
    }
    let mut total = 0.0;
    for (l, y) in batch {
        total += cross_entropy(l, *y)?;
    }
    Ok(total / batch.len() as f64)
}

/// Builds a `(1 × C)` logit row from values (handy for graph-level tests).
pub fn logits_row(values: &[f64]) -> Mat {
    Mat::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gelu, LAYER_NORM_EPS};
    use ndarray::array;
    use rand::Rng;

    fn rand_state(n: usize, d: usize, seed: u64) -> StateVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        StateVector::new(Mat::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn zeroed_head_gives_uniform_logits_and_lowest_argmax() {
        let mut dec = AttentiveClassifier::new(DecoderConfig::new(8, 2, 14, 0)).unwrap();
        dec.params.get_mut("head.weight").unwrap().fill(0.0);
        dec.params.get_mut("head.bias").unwrap().fill(0.0);
        let l = dec.classify(&rand_state(5, 8, 1)).unwrap();
        assert_eq!(l.num_classes(), HEICO_PHASES);
        assert!(l.values.iter().all(|&v| v == 0.0));
        assert_eq!(l.argmax(), 0);
    }

    #[test]
    fn class_counts_for_tasks() {
        let phase = AttentiveClassifier::new(DecoderConfig::new(8, 2, HEICO_PHASES, 0)).unwrap();
        assert_eq!(phase.classify(&rand_state(3, 8, 0)).unwrap().num_classes(), 14);
        let binary = AttentiveClassifier::new(DecoderConfig::new(8, 2, BINARY_OUTCOME, 0)).unwrap();
        assert_eq!(binary.classify(&rand_state(3, 8, 0)).unwrap().num_classes(), 2);
        assert!(AttentiveClassifier::new(DecoderConfig::new(8, 2, 1, 0)).is_err());
    }

    #[test]
    fn matches_scalar_evaluation_at_d2() {
        let mut dec = AttentiveClassifier::new(DecoderConfig {
            embed_dim: 2,
            heads: 1,
            num_classes: 2,
            queries: 1,
            depth: 1,
            mlp_ratio: 1,
            seed: 0,
        })
        .unwrap();
        let set = |dec: &mut AttentiveClassifier, k: &str, v: Mat| *dec.params.get_mut(k).unwrap() = v;
        set(&mut dec, "query", array![[0.3, -0.2]]);
        set(&mut dec, "blocks.0.norm_kv.weight", array![[1.5, 0.5]]);
        set(&mut dec, "blocks.0.norm_kv.bias", array![[0.1, -0.1]]);
        set(&mut dec, "blocks.0.xattn.v.weight", array![[0.2, 0.4], [-0.6, 0.8]]);
        set(&mut dec, "blocks.0.xattn.v.bias", array![[0.05, 0.0]]);
        set(&mut dec, "blocks.0.xattn.proj.weight", array![[1.0, 0.5], [0.25, -1.0]]);
        set(&mut dec, "blocks.0.xattn.proj.bias", array![[0.0, 0.2]]);
        set(&mut dec, "blocks.0.norm_mlp.weight", array![[1.0, 2.0]]);
        set(&mut dec, "blocks.0.norm_mlp.bias", array![[0.0, 0.3]]);
        set(&mut dec, "blocks.0.mlp.fc1.weight", array![[0.7, -0.3], [0.2, 0.9]]);
        set(&mut dec, "blocks.0.mlp.fc1.bias", array![[0.1, -0.2]]);
        set(&mut dec, "blocks.0.mlp.fc2.weight", array![[0.5, 0.1], [-0.4, 0.3]]);
        set(&mut dec, "blocks.0.mlp.fc2.bias", array![[0.0, 0.05]]);
        set(&mut dec, "head.weight", array![[1.0, -1.0], [0.5, 2.0]]);
        set(&mut dec, "head.bias", array![[0.25, -0.25]]);
        let s = [0.9, -0.4];
        let got = dec.classify(&StateVector::new(array![[s[0], s[1]]]).unwrap()).unwrap();

        // Scalar oracle. One key ⇒ attention weight 1, output = v.
        let ln = |x: [f64; 2], g: [f64; 2], b: [f64; 2]| {
            let m = (x[0] + x[1]) / 2.0;
            let var = ((x[0] - m).powi(2) + (x[1] - m).powi(2)) / 2.0;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            [(x[0] - m) * inv * g[0] + b[0], (x[1] - m) * inv * g[1] + b[1]]
        };
        let lin = |x: [f64; 2], w: [[f64; 2]; 2], b: [f64; 2]| {
            [x[0] * w[0][0] + x[1] * w[1][0] + b[0], x[0] * w[0][1] + x[1] * w[1][1] + b[1]]
        };
        let kv = ln(s, [1.5, 0.5], [0.1, -0.1]);
        let v = lin(kv, [[0.2, 0.4], [-0.6, 0.8]], [0.05, 0.0]);
        let a = lin(v, [[1.0, 0.5], [0.25, -1.0]], [0.0, 0.2]);
        let x1 = [0.3 + a[0], -0.2 + a[1]];
        let h = ln(x1, [1.0, 2.0], [0.0, 0.3]);
        let h = lin(h, [[0.7, -0.3], [0.2, 0.9]], [0.1, -0.2]);
        let h = [gelu(h[0]), gelu(h[1])];
        let m = lin(h, [[0.5, 0.1], [-0.4, 0.3]], [0.0, 0.05]);
        let x2 = [x1[0] + m[0], x1[1] + m[1]];
        let logits = lin(x2, [[1.0, -1.0], [0.5, 2.0]], [0.25, -0.25]);
        assert!((got.values[0] - logits[0]).abs() < 1e-12);
        assert!((got.values[1] - logits[1]).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let sat = Logits { values: array![1000.0, 0.0] };
        assert!(cross_entropy(&sat, 0).unwrap().abs() < 1e-12);
        let two = Logits { values: array![0.0, 0.0] };
        assert!((cross_entropy(&two, 1).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(&two, 1).unwrap() - 2f64.ln()).abs() < 1e-15);
        let fourteen = Logits { values: Array1::zeros(14) };
        assert!((cross_entropy(&fourteen, 13).unwrap() - 14f64.ln()).abs() < 1e-14);
        assert!((14f64.ln() - 2.6391).abs() < 1e-4);
        assert!(cross_entropy(&two, 2).is_err());
    }

    #[test]
    fn cross_entropy_is_shift_invariant() {
        let l = Logits { values: array![0.3, -1.2, 2.5, 0.0] };
        let shifted = Logits { values: &l.values + 123.456 };
        for y in 0..4 {
            assert!((cross_entropy(&l, y).unwrap() - cross_entropy(&shifted, y).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn classify_is_invariant_to_token_order() {
        let dec = AttentiveClassifier::new(DecoderConfig::new(8, 2, 3, 4)).unwrap();
        let s = rand_state(6, 8, 2);
        let perm = [3, 1, 5, 0, 4, 2];
        let shuffled = StateVector::new(s.tokens.select(ndarray::Axis(0), &perm)).unwrap();
        let a = dec.classify(&s).unwrap();
        let b = dec.classify(&shuffled).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let dec = AttentiveClassifier::new(DecoderConfig::new(8, 2, 3, 4)).unwrap();
        assert!(matches!(dec.classify(&rand_state(3, 4, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn batch_mean() {
        let a = (Logits { values: array![0.0, 0.0] }, 0);
        let b = (Logits { values: array![1000.0, 0.0] }, 0);
        let m = batch_cross_entropy(&[a, b]).unwrap();
        assert!((m - 2f64.ln() / 2.0).abs() < 1e-12);
        assert!(batch_cross_entropy(&[]).is_err());
    }
}
