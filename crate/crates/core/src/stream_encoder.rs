//! Cross-attention data-stream encoder.
//!
//! Time-resolved streams are tokenized per channel with a sliding window and
//! injected into the state vector by a stack of fusion layers. Each layer
//! computes
//!
//! ```text
//! q  = W_q s + b_q            (no norm on the state)
//! k  = W_k |t| + b_k,  v = W_v |t| + b_v
//! s~ = s + W_o attn(q, k, v) + b_o
//! s' = s~ + psi(|s~|)         psi = fc2(gelu(fc1(.)))
//! ```
//!
//! where `|.|` is layer norm. The q/k/v transforms are stored once and read by
//! every layer; the output projection, both norms and `psi` are per layer.
//! `W_o`, `b_o` and the output layer of `psi` start at zero, so a fresh
//! encoder is the identity on the state.

use std::collections::BTreeMap;

use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::nn::{self, Mode};
use crate::params::{Bound, Initializer, ParamSet};
use crate::tokens::{StateVector, TokenSequence};

/// `S` named channels sampled at shared, strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSeries {
    pub names: Vec<String>,
    pub units: Vec<String>,
    pub timestamps: Vec<f64>,
    /// `(T × S)`, one column per channel.
    pub values: Mat,
}

impl StreamSeries {
    pub fn new(names: Vec<String>, units: Vec<String>, timestamps: Vec<f64>, values: Mat) -> Result<Self> {
        let s = Self {
            names,
            units,
            timestamps,
            values,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (t, c) = self.values.dim();
        if self.names.len() != c || self.units.len() != c {
            return Err(Error::Shape(format!(
                "{} names / {} units for {c} channels",
                self.names.len(),
                self.units.len()
            )));
        }
        if self.timestamps.len() != t {
            return Err(Error::Shape(format!(
                "{} timestamps for {t} samples",
                self.timestamps.len()
            )));
        }
        if self.timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("stream timestamps must be strictly increasing".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) || self.timestamps.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("stream contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn num_channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamTokenizerSpec {
    /// Window width in samples; matches the backbone tubelet width.
    pub window: usize,
    pub stride: usize,
    pub embed_dim: usize,
    /// Add a sine/cosine encoding of the window index to every token.
    pub temporal_encoding: bool,
}

impl StreamTokenizerSpec {
    pub fn windows_per_channel(&self, len: usize) -> Result<usize> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument(format!("window/stride must be ≥ 1: {self:?}")));
        }
        if len < self.window {
            return Err(Error::Dimension(format!(
                "channel of length {len} is shorter than the window {}",
                self.window
            )));
        }
        Ok((len - self.window) / self.stride + 1)
    }
}

/// Per-channel window matrices `(n_windows × w)`, the raw tokenizer input.
pub fn stream_windows(streams: &StreamSeries, spec: &StreamTokenizerSpec) -> Result<Vec<Mat>> {
    let n = spec.windows_per_channel(streams.len())?;
    Ok((0..streams.num_channels())
        .map(|c| {
            let col = streams.values.column(c);
            Mat::from_shape_fn((n, spec.window), |(i, j)| col[i * spec.stride + j])
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamEncoderConfig {
    pub channels: usize,
    pub tokenizer: StreamTokenizerSpec,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    pub mlp_ratio: usize,
    pub seed: u64,
}

impl StreamEncoderConfig {
    /// Four layers, four heads, dropout 0.2.
    pub fn standard(channels: usize, window: usize, embed_dim: usize, seed: u64) -> Self {
        Self {
            channels,
            tokenizer: StreamTokenizerSpec {
                window,
                stride: 1,
                embed_dim,
                temporal_encoding: true,
            },
            heads: 4,
            layers: 4,
            dropout: 0.2,
            mlp_ratio: 2,
            seed,
        }
    }
}

/// Fusion-layer weights: one shared q/k/v triple plus per-layer blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    pub params: ParamSet,
}

/// Borrowed view of the arrays one layer reads.
pub struct FusionLayerView<'a> {
    pub wq: &'a Mat,
    pub wk: &'a Mat,
    pub wv: &'a Mat,
    pub wo: &'a Mat,
    pub bo: &'a Mat,
    pub psi_out: &'a Mat,
}

impl FusionParams {
    pub fn dim(&self) -> usize {
        self.params.get("shared.q.weight").map(|m| m.nrows()).unwrap_or(0)
    }

    /// Role → parameter-name table of layer `layer` (1-based).
    pub fn layer_names(&self, layer: usize) -> BTreeMap<&'static str, String> {
        let l = layer - 1;
        let mut m = BTreeMap::new();
        for (role, name) in [
            ("q.weight", "shared.q.weight".to_string()),
            ("q.bias", "shared.q.bias".to_string()),
            ("k.weight", "shared.k.weight".to_string()),
            ("k.bias", "shared.k.bias".to_string()),
            ("v.weight", "shared.v.weight".to_string()),
            ("v.bias", "shared.v.bias".to_string()),
            ("o.weight", format!("layers.{l}.out.weight")),
            ("o.bias", format!("layers.{l}.out.bias")),
            ("norm_t.weight", format!("layers.{l}.norm_t.weight")),
            ("norm_t.bias", format!("layers.{l}.norm_t.bias")),
            ("norm_s.weight", format!("layers.{l}.norm_s.weight")),
            ("norm_s.bias", format!("layers.{l}.norm_s.bias")),
            ("psi.fc1.weight", format!("layers.{l}.psi.fc1.weight")),
            ("psi.fc1.bias", format!("layers.{l}.psi.fc1.bias")),
            ("psi.fc2.weight", format!("layers.{l}.psi.fc2.weight")),
            ("psi.fc2.bias", format!("layers.{l}.psi.fc2.bias")),
        ] {
            m.insert(role, name);
        }
        m
    }

    /// Sharing metadata stored alongside the arrays in checkpoints.
    pub fn sharing(&self) -> BTreeMap<String, BTreeMap<&'static str, String>> {
        (1..=self.layers)
            .map(|l| (format!("layer{l}"), self.layer_names(l)))
            .collect()
    }

    pub fn layer(&self, layer: usize) -> Result<FusionLayerView<'_>> {
        if layer == 0 || layer > self.layers {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} outside 1..={}",
                self.layers
            )));
        }
        let names = self.layer_names(layer);
        Ok(FusionLayerView {
            wq: self.params.get(&names["q.weight"])?,
            wk: self.params.get(&names["k.weight"])?,
            wv: self.params.get(&names["v.weight"])?,
            wo: self.params.get(&names["o.weight"])?,
            bo: self.params.get(&names["o.bias"])?,
            psi_out: self.params.get(&names["psi.fc2.weight"])?,
        })
    }
}

/// Fresh fusion parameters. Output projection and `psi` output layer are zero,
/// everything else is drawn from the seeded initialiser.
pub fn init_fusion_params(d: usize, heads: usize, layers: usize, seed: u64) -> Result<FusionParams> {
    init_fusion_params_with(d, heads, layers, 2, 0.2, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn init_fusion_params_with(
    d: usize,
    heads: usize,
    layers: usize,
    mlp_ratio: usize,
    dropout: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FusionParams> {
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::HeadDivisibility { dim: d, heads });
    }
    if layers == 0 {
        return Err(Error::InvalidArgument("fusion encoder needs at least one layer".into()));
    }
    let mut init = Initializer::new(rng);
    let mut p = ParamSet::new();
    for t in ["q", "k", "v"] {
        init.linear(&mut p, &format!("shared.{t}"), d, d);
    }
    let hidden = d * mlp_ratio;
    for l in 0..layers {
        init.layer_norm(&mut p, &format!("layers.{l}.norm_t"), d);
        init.zero_linear(&mut p, &format!("layers.{l}.out"), d, d);
        init.layer_norm(&mut p, &format!("layers.{l}.norm_s"), d);
        init.linear(&mut p, &format!("layers.{l}.psi.fc1"), d, hidden);
        init.zero_linear(&mut p, &format!("layers.{l}.psi.fc2"), hidden, d);
    }
    Ok(FusionParams {
        heads,
        layers,
        dropout,
        params: p,
    })
}

/// One fusion layer (1-based `layer`) on graph nodes.
pub fn fusion_layer_graph(
    g: &mut Graph,
    p: &Bound,
    layer: usize,
    heads: usize,
    tokens: Var,
    state: Var,
    mode: &mut Mode,
) -> Result<Var> {
    let l = layer - 1;
    let (ns, d) = g.shape(state);
    if g.shape(tokens).1 != d {
        return Err(Error::Shape(format!(
            "stream tokens have width {}, state has {d}",
            g.shape(tokens).1
        )));
    }
    let tn = nn::layer_norm(g, p, &format!("layers.{l}.norm_t"), tokens)?;
    let q = nn::linear(g, p, "shared.q", state)?;
    let k = nn::linear(g, p, "shared.k", tn)?;
    let v = nn::linear(g, p, "shared.v", tn)?;
    let a = nn::attention(g, q, k, v, heads, mode)?;
    let o = nn::linear(g, p, &format!("layers.{l}.out"), a)?;
    let s_tilde = g.add(state, o);
    let sn = nn::layer_norm(g, p, &format!("layers.{l}.norm_s"), s_tilde)?;
    let psi = nn::mlp(g, p, &format!("layers.{l}.psi"), sn, mode)?;
    let out = g.add(s_tilde, psi);
    debug_assert_eq!(g.shape(out), (ns, d));
    Ok(out)
}

/// Runs `layers` fusion layers; within each layer every modality updates the
/// state in order, and the final state of one layer seeds the next.
pub fn fuse_modalities(
    g: &mut Graph,
    modalities: &[(&Bound, Var)],
    state: Var,
    layers: usize,
    heads: usize,
    mode: &mut Mode,
) -> Result<Var> {
    let mut s = state;
    for layer in 1..=layers {
        for (p, t) in modalities {
            s = fusion_layer_graph(g, p, layer, heads, *t, s, mode)?;
        }
    }
    Ok(s)
}

/// Tokenizer arrays plus fusion parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEncoder {
    pub config: StreamEncoderConfig,
    /// `tokenizer.{c}.{weight,bias}` per channel and `tokenizer.channel_embed`.
    pub tokenizer: ParamSet,
    pub fusion: FusionParams,
}

impl StreamEncoder {
    pub fn new(config: StreamEncoderConfig) -> Result<Self> {
        let d = config.tokenizer.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let fusion = init_fusion_params_with(d, config.heads, config.layers, config.mlp_ratio, config.dropout, &mut rng)?;
        let mut init = Initializer::new(&mut rng);
        let mut tokenizer = ParamSet::new();
        for c in 0..config.channels {
            init.linear(&mut tokenizer, &format!("tokenizer.{c}"), config.tokenizer.window, d);
        }
        tokenizer.insert("tokenizer.channel_embed", init.normal((config.channels, d), 0.02));
        Ok(Self {
            config,
            tokenizer,
            fusion,
        })
    }

    pub fn digest(&self) -> String {
        let mut all = self.tokenizer.clone();
        for (k, v) in self.fusion.params.iter() {
            all.insert(format!("fusion/{k}"), v.clone());
        }
        all.digest()
    }

    /// Stream tokens on the graph from per-channel window matrices.
    pub fn tokenize_graph(&self, g: &mut Graph, tp: &Bound, windows: &[Mat]) -> Result<Var> {
        if windows.len() != self.config.channels {
            return Err(Error::Shape(format!(
                "encoder expects {} channels, got {}",
                self.config.channels,
                windows.len()
            )));
        }
        let d = self.config.tokenizer.embed_dim;
        let embed = tp.var("tokenizer.channel_embed")?;
        let mut parts = Vec::with_capacity(windows.len());
        for (c, w) in windows.iter().enumerate() {
            let x = g.leaf(w.clone());
            let x = nn::linear(g, tp, &format!("tokenizer.{c}"), x)?;
            let e = g.gather_rows(embed, &[c]);
            let mut x = g.add_row(x, e);
            if self.config.tokenizer.temporal_encoding {
                let pe = Mat::from_shape_fn((w.nrows(), d), |(i, j)| nn::sincos_1d(i as f64, d)[j]);
                let pe = g.leaf(pe);
                x = g.add(x, pe);
            }
            parts.push(x);
        }
        Ok(if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) })
    }

    /// `n_m = S·((T − w)/stride + 1)` tokens, channel-major.
    pub fn tokenize_streams(&self, streams: &StreamSeries) -> Result<TokenSequence> {
        let windows = stream_windows(streams, &self.config.tokenizer)?;
        let mut g = Graph::new();
        let tp = self.tokenizer.bind(&mut g);
        let t = self.tokenize_graph(&mut g, &tp, &windows)?;
        Ok(g.value(t).clone())
    }

    /// A single fusion layer in eval mode.
    pub fn fusion_layer(&self, tokens: &TokenSequence, state: &StateVector, layer: usize) -> Result<StateVector> {
        if layer == 0 || layer > self.fusion.layers {
            return Err(Error::InvalidArgument(format!("layer {layer} outside 1..={}", self.fusion.layers)));
        }
        let mut g = Graph::new();
        let p = self.fusion.params.bind(&mut g);
        let t = g.leaf(tokens.clone());
        let s = g.leaf(state.tokens.clone());
        let out = fusion_layer_graph(&mut g, &p, layer, self.fusion.heads, t, s, &mut Mode::Eval)?;
        StateVector::new(g.value(out).clone())
    }

    /// All fusion layers in eval mode.
    pub fn encode_streams(&self, tokens: &TokenSequence, state: &StateVector) -> Result<StateVector> {
        let mut g = Graph::new();
        let p = self.fusion.params.bind(&mut g);
        let t = g.leaf(tokens.clone());
        let s = g.leaf(state.tokens.clone());
        let out = fuse_modalities(&mut g, &[(&p, t)], s, self.fusion.layers, self.fusion.heads, &mut Mode::Eval)?;
        StateVector::new(g.value(out).clone())
    }

    /// Tokenize then fuse, in eval mode.
    pub fn encode(&self, streams: &StreamSeries, state: &StateVector) -> Result<StateVector> {
        let t = self.tokenize_streams(streams)?;
        self.encode_streams(&t, state)
    }

    /// Full forward on a caller-owned graph (training path).
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        tp: &Bound,
        fp: &Bound,
        windows: &[Mat],
        state: Var,
        mode: &mut Mode,
    ) -> Result<Var> {
        let t = self.tokenize_graph(g, tp, windows)?;
        fuse_modalities(g, &[(fp, t)], state, self.fusion.layers, self.fusion.heads, mode)
    }
}

/// Stream tokens of one channel, used by tests: rows of `windows[c]` projected.
pub fn channel_rows(tokens: &TokenSequence, channel: usize, per_channel: usize) -> Mat {
    let idx: Vec<usize> = (channel * per_channel..(channel + 1) * per_channel).collect();
    tokens.select(Axis(0), &idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn series(s: usize, t: usize, seed: u64) -> StreamSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        StreamSeries::new(
            (0..s).map(|i| format!("ch{i}")).collect(),
            vec!["u".into(); s],
            (0..t).map(|i| i as f64).collect(),
            Mat::from_shape_fn((t, s), |_| rng.gen_range(-1.0..1.0)),
        )
        .unwrap()
    }

    fn random_mat(shape: (usize, usize), seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_shape_fn(shape, |_| rng.gen_range(-2.0..2.0))
    }

    fn config(d: usize, heads: usize, layers: usize) -> StreamEncoderConfig {
        StreamEncoderConfig {
            channels: 4,
            tokenizer: StreamTokenizerSpec {
                window: 2,
                stride: 1,
                embed_dim: d,
                temporal_encoding: true,
            },
            heads,
            layers,
            dropout: 0.2,
            mlp_ratio: 2,
            seed: 11,
        }
    }

    #[test]
    fn token_count_matches_window_arithmetic() {
        let enc = StreamEncoder::new(config(8, 2, 1)).unwrap();
        let t = enc.tokenize_streams(&series(4, 16, 0)).unwrap();
        assert_eq!(t.dim(), (60, 8));
        let t = enc.tokenize_streams(&series(4, 2, 0)).unwrap();
        assert_eq!(t.nrows(), 4);
    }

    #[test]
    fn short_channel_is_rejected() {
        let enc = StreamEncoder::new(config(8, 2, 1)).unwrap();
        assert!(matches!(enc.tokenize_streams(&series(4, 1, 0)), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_channel_tokens_equal_channel_embedding() {
        let mut cfg = config(8, 2, 1);
        cfg.tokenizer.temporal_encoding = false;
        let enc = StreamEncoder::new(cfg).unwrap();
        let mut s = series(4, 6, 1);
        s.values.column_mut(2).fill(0.0);
        let t = enc.tokenize_streams(&s).unwrap();
        let rows = channel_rows(&t, 2, 5);
        let embed = enc.tokenizer.get("tokenizer.channel_embed").unwrap().row(2).to_owned();
        for r in rows.outer_iter() {
            assert_eq!(r, embed);
        }

        // With the temporal encoding on, the window index encoding is added.
        let mut cfg = config(8, 2, 1);
        cfg.tokenizer.temporal_encoding = true;
        let enc = StreamEncoder::new(cfg).unwrap();
        let t = enc.tokenize_streams(&s).unwrap();
        let rows = channel_rows(&t, 2, 5);
        let embed = enc.tokenizer.get("tokenizer.channel_embed").unwrap().row(2).to_owned();
        for (i, r) in rows.outer_iter().enumerate() {
            let pe = ndarray::Array1::from(nn::sincos_1d(i as f64, 8));
            let expect = &embed + &pe;
            for (a, b) in r.iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn fresh_encoder_is_identity() {
        let enc = StreamEncoder::new(config(16, 4, 4)).unwrap();
        for seed in 0..5 {
            let t = random_mat((7, 16), seed);
            let s = StateVector::new(random_mat((5, 16), seed + 100)).unwrap();
            assert_eq!(enc.encode_streams(&t, &s).unwrap(), s);
        }
    }

    #[test]
    fn single_layer_composition_base_case() {
        let mut enc = StreamEncoder::new(config(8, 2, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (_, v) in enc.fusion.params.iter_mut() {
            v.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
        let t = random_mat((6, 8), 1);
        let s = StateVector::new(random_mat((3, 8), 2)).unwrap();
        assert_eq!(enc.encode_streams(&t, &s).unwrap(), enc.fusion_layer(&t, &s, 1).unwrap());
    }

    #[test]
    fn shape_is_independent_of_stream_token_count() {
        let mut enc = StreamEncoder::new(config(8, 2, 2)).unwrap();
        enc.fusion.params.get_mut("layers.0.out.weight").unwrap().fill(0.1);
        let s = StateVector::new(random_mat((3, 8), 2)).unwrap();
        for n in [1, 4, 13] {
            let out = enc.fusion_layer(&random_mat((n, 8), n as u64), &s, 1).unwrap();
            assert_eq!(out.tokens.dim(), (3, 8));
        }
    }

    #[test]
    fn shared_qkv_storage() {
        let f = init_fusion_params(8, 2, 4, 1).unwrap();
        let first = f.layer(1).unwrap();
        let last = f.layer(4).unwrap();
        assert!(std::ptr::eq(first.wq, last.wq));
        assert!(std::ptr::eq(first.wk, last.wk));
        assert!(std::ptr::eq(first.wv, last.wv));
        assert!(!std::ptr::eq(first.wo, last.wo));
        assert_eq!(f.params.names().filter(|n| n.starts_with("shared.")).count(), 6);
    }

    #[test]
    fn init_zeroes_residual_branches_and_is_deterministic() {
        let f = init_fusion_params(8, 2, 3, 9).unwrap();
        for l in 1..=3 {
            let v = f.layer(l).unwrap();
            assert!(v.wo.iter().all(|&x| x == 0.0));
            assert!(v.bo.iter().all(|&x| x == 0.0));
            assert!(v.psi_out.iter().all(|&x| x == 0.0));
        }
        assert_eq!(f, init_fusion_params(8, 2, 3, 9).unwrap());
        assert!(matches!(init_fusion_params(6, 4, 1, 0), Err(Error::HeadDivisibility { .. })));
    }

    #[test]
    fn permuting_stream_tokens_leaves_output_unchanged() {
        let mut enc = StreamEncoder::new(config(8, 2, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (_, v) in enc.fusion.params.iter_mut() {
            v.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
        let s = enc.tokenize_streams(&series(4, 6, 3)).unwrap();
        let state = StateVector::new(random_mat((3, 8), 4)).unwrap();
        let perm: Vec<usize> = (0..s.nrows()).rev().collect();
        let shuffled = s.select(Axis(0), &perm);
        let a = enc.fusion_layer(&s, &state, 1).unwrap();
        let b = enc.fusion_layer(&shuffled, &state, 1).unwrap();
        for (x, y) in a.tokens.iter().zip(b.tokens.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_mode_is_bit_deterministic_and_train_mode_uses_dropout() {
        let mut enc = StreamEncoder::new(config(8, 2, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (_, v) in enc.fusion.params.iter_mut() {
            v.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
        let t = random_mat((6, 8), 1);
        let s = StateVector::new(random_mat((3, 8), 2)).unwrap();
        assert_eq!(enc.encode_streams(&t, &s).unwrap(), enc.encode_streams(&t, &s).unwrap());

        let mut g = Graph::new();
        let p = enc.fusion.params.bind(&mut g);
        let tv = g.leaf(t.clone());
        let sv = g.leaf(s.tokens.clone());
        let mut drng = ChaCha8Rng::seed_from_u64(0);
        let mut mode = Mode::Train {
            dropout: 0.5,
            rng: &mut drng,
        };
        let out = fuse_modalities(&mut g, &[(&p, tv)], sv, 2, 2, &mut mode).unwrap();
        assert_ne!(g.value(out), &enc.encode_streams(&t, &s).unwrap().tokens);
    }

    #[test]
    fn sharing_metadata_points_every_layer_at_one_array() {
        let f = init_fusion_params(8, 2, 4, 1).unwrap();
        let sharing = f.sharing();
        let qs: std::collections::BTreeSet<_> = sharing.values().map(|m| m["q.weight"].clone()).collect();
        assert_eq!(qs.len(), 1);
        let os: std::collections::BTreeSet<_> = sharing.values().map(|m| m["o.weight"].clone()).collect();
        assert_eq!(os.len(), 4);
    }

    #[test]
    fn stream_validation() {
        assert!(StreamSeries::new(vec!["a".into()], vec!["u".into()], vec![0.0, 0.0], Mat::zeros((2, 1))).is_err());
        assert!(StreamSeries::new(vec!["a".into()], vec!["u".into()], vec![0.0], Mat::zeros((2, 1))).is_err());
        let mut v = Mat::zeros((2, 1));
        v[[0, 0]] = f64::NAN;
        assert!(StreamSeries::new(vec!["a".into()], vec!["u".into()], vec![0.0, 1.0], v).is_err());
    }
}
