//! Frozen video embedding backbone and the self-supervised JEPA loop.
//!
//! The [`VideoBackbone`] trait is the plug-in surface: anything that can
//! tokenize a clip and map it to an `(n_s × d)` state may be registered by
//! name in a [`BackboneRegistry`]. [`StubBackbone`] is the built-in desk-scale
//! provider: a frozen seeded linear tubelet projection plus fixed
//! spatiotemporal sine/cosine encodings, followed by a small transformer
//! stack whose student/teacher copies are trained with [`StubBackbone::jepa_step`].

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array4, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mat, Var};
use crate::error::{Error, Result};
use crate::nn::{self, Mode};
use crate::optim::{AdamW, AdamWConfig};
use crate::params::{Bound, Initializer, ParamSet};
use crate::tokens::StateVector;

/// A decoded clip, frames laid out `(T, H, W, C)` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub frames: Array4<f32>,
    pub fps: f64,
    pub anchor_time: f64,
}

impl VideoClip {
    pub fn new(frames: Array4<f32>, fps: f64, anchor_time: f64) -> Result<Self> {
        let clip = Self {
            frames,
            fps,
            anchor_time,
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<()> {
        let (t, h, w, c) = self.frames.dim();
        if t == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::Dimension(format!("empty clip {:?}", self.frames.dim())));
        }
        if !(self.fps > 0.0) {
            return Err(Error::InvalidArgument(format!("fps must be positive, got {}", self.fps)));
        }
        if let Some(bad) = self.frames.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidArgument(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TubeletSpec {
    /// Frames per tubelet.
    pub temporal_width: usize,
    /// Pixel side length of the square spatial patch.
    pub spatial_size: usize,
    pub embed_dim: usize,
}

impl TubeletSpec {
    pub fn validate(&self) -> Result<()> {
        if self.temporal_width == 0 || self.spatial_size == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidArgument(format!("degenerate tubelet spec {self:?}")));
        }
        Ok(())
    }

    pub fn raw_dim(&self, channels: usize) -> usize {
        self.temporal_width * self.spatial_size * self.spatial_size * channels
    }

    /// `(T/w_t, H/p, W/p)` or a dimension error.
    pub fn grid(&self, frames: usize, height: usize, width: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        if !frames.is_multiple_of(self.temporal_width) {
            return Err(Error::Dimension(format!(
                "{frames} frames not divisible by tubelet width {}",
                self.temporal_width
            )));
        }
        if !height.is_multiple_of(self.spatial_size) || !width.is_multiple_of(self.spatial_size) {
            return Err(Error::Dimension(format!(
                "frame {height}×{width} not divisible by patch size {}",
                self.spatial_size
            )));
        }
        Ok((
            frames / self.temporal_width,
            height / self.spatial_size,
            width / self.spatial_size,
        ))
    }
}

/// Raw tubelet tokens `(n_v × d_raw)` with their `(time, row, col)` grid index.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedVideo {
    pub tokens: Mat,
    pub positions: Vec<(usize, usize, usize)>,
}

impl TokenizedVideo {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Splits a clip into non-overlapping tubelets, time-major then row then column.
/// Each token flattens its `(dt, dy, dx, c)` block in that order.
pub fn tokenize_video(clip: &VideoClip, spec: &TubeletSpec) -> Result<TokenizedVideo> {
    let (t, h, w, c) = clip.frames.dim();
    let (gt, gh, gw) = spec.grid(t, h, w)?;
    let p = spec.spatial_size;
    let wt = spec.temporal_width;
    let n = gt * gh * gw;
    let mut tokens = Mat::zeros((n, spec.raw_dim(c)));
    let mut positions = Vec::with_capacity(n);
    let mut idx = 0;
    for ti in 0..gt {
        for ri in 0..gh {
            for ci in 0..gw {
                let mut k = 0;
                for dt in 0..wt {
                    for dy in 0..p {
                        for dx in 0..p {
                            for ch in 0..c {
                                tokens[[idx, k]] =
                                    clip.frames[[ti * wt + dt, ri * p + dy, ci * p + dx, ch]] as f64;
                                k += 1;
                            }
                        }
                    }
                }
                positions.push((ti, ri, ci));
                idx += 1;
            }
        }
    }
    Ok(TokenizedVideo { tokens, positions })
}

/// Set of masked token indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMask {
    pub masked: BTreeSet<usize>,
    pub num_tokens: usize,
    pub ratio: f64,
}

impl TokenMask {
    pub fn masked_indices(&self) -> Vec<usize> {
        self.masked.iter().copied().collect()
    }

    pub fn context_indices(&self) -> Vec<usize> {
        (0..self.num_tokens).filter(|i| !self.masked.contains(i)).collect()
    }
}

/// Uniform random masking of `round(ratio·n)` tokens, clamped to `[1, n−1]`.
pub fn sample_mask(num_tokens: usize, ratio: f64, rng: &mut ChaCha8Rng) -> Result<TokenMask> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("mask ratio {ratio} not in (0, 1)")));
    }
    if num_tokens < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 tokens to mask, got {num_tokens}"
        )));
    }
    let count = ((ratio * num_tokens as f64).round() as usize).clamp(1, num_tokens - 1);
    let masked = index::sample(rng, num_tokens, count).into_iter().collect();
    Ok(TokenMask {
        masked,
        num_tokens,
        ratio,
    })
}

/// Student, EMA teacher, and the discardable predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneParams {
    pub student: ParamSet,
    pub teacher: ParamSet,
    pub predictor: ParamSet,
}

impl BackboneParams {
    pub fn validate(&self) -> Result<()> {
        self.student.check_same_layout(&self.teacher)
    }
}

/// `teacher ← m·teacher + (1−m)·student` for every named array.
pub fn ema_update(teacher: &mut ParamSet, student: &ParamSet, momentum: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::InvalidArgument(format!("EMA momentum {momentum} not in [0, 1]")));
    }
    teacher.check_same_layout(student)?;
    for (name, t) in teacher.iter_mut() {
        let s = student.get(name)?;
        t.zip_mut_with(s, |t, &s| *t = momentum * *t + (1.0 - momentum) * s);
    }
    Ok(())
}

/// Mean absolute difference restricted to the rows in `masked`.
pub fn masked_l1(prediction: &Mat, target: &Mat, masked: &[usize]) -> Result<f64> {
    if prediction.dim() != (masked.len(), target.ncols()) {
        return Err(Error::Shape(format!(
            "prediction {:?} for {} masked tokens of width {}",
            prediction.dim(),
            masked.len(),
            target.ncols()
        )));
    }
    let picked = target.select(Axis(0), masked);
    Ok((prediction - &picked).mapv(f64::abs).mean().unwrap_or(0.0))
}

/// Pluggable frozen video encoder.
pub trait VideoBackbone: Send + Sync {
    fn provider(&self) -> &str;

    fn tubelet(&self) -> &TubeletSpec;

    fn embed_dim(&self) -> usize {
        self.tubelet().embed_dim
    }

    fn tokenize_video(&self, clip: &VideoClip) -> Result<TokenizedVideo> {
        tokenize_video(clip, self.tubelet())
    }

    /// Frozen embedding of a clip; a pure function of the clip.
    fn encode(&self, clip: &VideoClip) -> Result<StateVector>;

    /// Digest of every array the provider reads during `encode`.
    fn digest(&self) -> String;

    fn to_checkpoint(&self) -> BackboneCheckpoint;
}

/// Provider-agnostic checkpoint container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneCheckpoint {
    pub provider: String,
    pub tubelet: TubeletSpec,
    pub config: serde_json::Value,
    pub arrays: BTreeMap<String, ParamSet>,
}

type Factory = fn(&BackboneCheckpoint) -> Result<Box<dyn VideoBackbone>>;

/// Name → constructor map for backbone providers.
pub struct BackboneRegistry {
    factories: BTreeMap<String, Factory>,
}

impl Default for BackboneRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register(STUB_PROVIDER, |ckpt| {
            Ok(Box::new(StubBackbone::from_checkpoint(ckpt)?) as Box<dyn VideoBackbone>)
        });
        r
    }
}

impl BackboneRegistry {
    pub fn register(&mut self, name: &str, factory: Factory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn providers(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn load(&self, ckpt: &BackboneCheckpoint) -> Result<Box<dyn VideoBackbone>> {
        let factory = self
            .factories
            .get(&ckpt.provider)
            .ok_or_else(|| Error::UnknownProvider(ckpt.provider.clone()))?;
        factory(ckpt)
    }
}

pub const STUB_PROVIDER: &str = "stub";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StubBackboneConfig {
    pub tubelet: TubeletSpec,
    pub channels: usize,
    /// Transformer blocks after the projection; 0 leaves projection + encoding.
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub predictor_hidden: usize,
    pub seed: u64,
}

impl Default for StubBackboneConfig {
    fn default() -> Self {
        Self {
            tubelet: TubeletSpec {
                temporal_width: 2,
                spatial_size: 4,
                embed_dim: 64,
            },
            channels: 3,
            depth: 2,
            heads: 4,
            mlp_ratio: 2,
            predictor_hidden: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StubBackbone {
    pub config: StubBackboneConfig,
    /// Frozen `patch_embed.{weight,bias}`.
    pub patch: ParamSet,
    pub params: BackboneParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JepaConfig {
    pub mask_ratio: f64,
    pub momentum: f64,
    pub optimizer: AdamWConfig,
}

impl Default for JepaConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 0.75,
            momentum: 0.998,
            optimizer: AdamWConfig::default(),
        }
    }
}

/// Optimizer state for the JEPA loop (student and predictor are hot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JepaOptimizer {
    pub student: AdamW,
    pub predictor: AdamW,
}

impl JepaOptimizer {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            student: AdamW::new(config),
            predictor: AdamW::new(config),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JepaStepReport {
    pub loss: f64,
    pub masked_tokens: usize,
}

impl StubBackbone {
    pub fn new(config: StubBackboneConfig) -> Result<Self> {
        let tub = config.tubelet;
        tub.validate()?;
        let d = tub.embed_dim;
        if config.depth > 0 && (config.heads == 0 || !d.is_multiple_of(config.heads)) {
            return Err(Error::HeadDivisibility {
                dim: d,
                heads: config.heads,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut init = Initializer::new(&mut rng);

        let mut patch = ParamSet::new();
        init.linear(&mut patch, "patch_embed", tub.raw_dim(config.channels), d);

        let mut student = ParamSet::new();
        let hidden = d * config.mlp_ratio;
        for b in 0..config.depth {
            let pre = format!("blocks.{b}");
            init.layer_norm(&mut student, &format!("{pre}.norm1"), d);
            for proj in ["q", "k", "v", "proj"] {
                init.linear(&mut student, &format!("{pre}.attn.{proj}"), d, d);
            }
            init.layer_norm(&mut student, &format!("{pre}.norm2"), d);
            init.linear(&mut student, &format!("{pre}.mlp.fc1"), d, hidden);
            init.linear(&mut student, &format!("{pre}.mlp.fc2"), hidden, d);
        }
        if config.depth > 0 {
            init.layer_norm(&mut student, "norm", d);
        }

        let mut predictor = ParamSet::new();
        predictor.insert("predictor.mask_token", init.normal((1, d), 0.02));
        init.linear(&mut predictor, "predictor.fc1", 2 * d, config.predictor_hidden);
        init.linear(&mut predictor, "predictor.fc2", config.predictor_hidden, d);

        let teacher = student.clone();
        Ok(Self {
            config,
            patch,
            params: BackboneParams {
                student,
                teacher,
                predictor,
            },
        })
    }

    pub fn from_checkpoint(ckpt: &BackboneCheckpoint) -> Result<Self> {
        if ckpt.provider != STUB_PROVIDER {
            return Err(Error::UnknownProvider(ckpt.provider.clone()));
        }
        let config: StubBackboneConfig = serde_json::from_value(ckpt.config.clone())?;
        let take = |k: &str| {
            ckpt.arrays
                .get(k)
                .cloned()
                .ok_or_else(|| Error::MissingParam(format!("backbone checkpoint section `{k}`")))
        };
        let out = Self {
            config,
            patch: take("patch")?,
            params: BackboneParams {
                student: take("student")?,
                teacher: take("teacher")?,
                predictor: take("predictor")?,
            },
        };
        out.params.validate()?;
        let expect = Self::new(config)?;
        out.patch.check_same_layout(&expect.patch)?;
        out.params.student.check_same_layout(&expect.params.student)?;
        Ok(out)
    }

    /// Projection plus positional encoding for every token, `(n_v × d)`.
    pub fn embed_tokens(&self, tokenized: &TokenizedVideo) -> Result<Mat> {
        let w = self.patch.get("patch_embed.weight")?;
        let b = self.patch.get("patch_embed.bias")?;
        if tokenized.tokens.ncols() != w.nrows() {
            return Err(Error::Shape(format!(
                "tubelet width {} but projection expects {}",
                tokenized.tokens.ncols(),
                w.nrows()
            )));
        }
        let d = self.config.tubelet.embed_dim;
        let mut x = tokenized.tokens.dot(w) + b;
        for (i, &(t, r, c)) in tokenized.positions.iter().enumerate() {
            let pe = nn::sincos_3d(t, r, c, d);
            for (j, v) in pe.into_iter().enumerate() {
                x[[i, j]] += v;
            }
        }
        Ok(x)
    }

    /// Runs the transformer stack bound in `p` over `x`.
    fn blocks(&self, g: &mut Graph, p: &Bound, mut x: Var, mode: &mut Mode) -> Result<Var> {
        let heads = self.config.heads;
        for b in 0..self.config.depth {
            let pre = format!("blocks.{b}");
            let h = nn::layer_norm(g, p, &format!("{pre}.norm1"), x)?;
            let q = nn::linear(g, p, &format!("{pre}.attn.q"), h)?;
            let k = nn::linear(g, p, &format!("{pre}.attn.k"), h)?;
            let v = nn::linear(g, p, &format!("{pre}.attn.v"), h)?;
            let a = nn::attention(g, q, k, v, heads, mode)?;
            let a = nn::linear(g, p, &format!("{pre}.attn.proj"), a)?;
            x = g.add(x, a);
            let h = nn::layer_norm(g, p, &format!("{pre}.norm2"), x)?;
            let m = nn::mlp(g, p, &format!("{pre}.mlp"), h, mode)?;
            x = g.add(x, m);
        }
        if self.config.depth > 0 {
            x = nn::layer_norm(g, p, "norm", x)?;
        }
        Ok(x)
    }

    /// Embedding under the given parameters; the teacher is what `encode` uses.
    pub fn encode_with(&self, clip: &VideoClip, params: &BackboneParams) -> Result<StateVector> {
        clip.validate()?;
        params.validate()?;
        let tok = self.tokenize_video(clip)?;
        let x0 = self.embed_tokens(&tok)?;
        if self.config.depth == 0 {
            return StateVector::new(x0);
        }
        let mut g = Graph::new();
        let p = params.teacher.bind(&mut g);
        let x = g.leaf(x0);
        let out = self.blocks(&mut g, &p, x, &mut Mode::Eval)?;
        StateVector::new(g.value(out).clone())
    }

    /// Builds the masked-prediction loss for one batch on a fresh graph.
    /// Returns the graph, the loss node, and the student/predictor bindings.
    pub fn jepa_loss_graph(
        &self,
        batch: &[VideoClip],
        mask: &TokenMask,
    ) -> Result<(Graph, Var, Bound, Bound)> {
        if batch.is_empty() {
            return Err(Error::Empty("JEPA step needs a nonempty batch".into()));
        }
        let d = self.config.tubelet.embed_dim;
        let masked = mask.masked_indices();
        let context = mask.context_indices();

        let mut g = Graph::new();
        let sp = self.params.student.bind(&mut g);
        let pp = self.params.predictor.bind(&mut g);
        let mask_token = pp.var("predictor.mask_token")?;

        let mut losses = Vec::with_capacity(batch.len());
        for clip in batch {
            let tok = self.tokenize_video(clip)?;
            if tok.len() != mask.num_tokens {
                return Err(Error::Shape(format!(
                    "mask built for {} tokens, clip has {}",
                    mask.num_tokens,
                    tok.len()
                )));
            }
            let x0 = self.embed_tokens(&tok)?;

            // Teacher sees every token; its output is a constant target.
            let target = {
                let mut tg = Graph::new();
                let tp = self.params.teacher.bind(&mut tg);
                let x = tg.leaf(x0.clone());
                let out = self.blocks(&mut tg, &tp, x, &mut Mode::Eval)?;
                tg.value(out).select(Axis(0), &masked)
            };

            let ctx = g.leaf(x0.select(Axis(0), &context));
            let s = self.blocks(&mut g, &sp, ctx, &mut Mode::Eval)?;
            let pooled = g.mean_rows(s);
            let pooled = g.gather_rows(pooled, &vec![0; masked.len()]);
            let pos = Mat::from_shape_fn((masked.len(), d), |(i, j)| {
                let (t, r, c) = tok.positions[masked[i]];
                nn::sincos_3d(t, r, c, d)[j]
            });
            let pos = g.leaf(pos);
            let queries = g.add_row(pos, mask_token);
            let inp = g.concat_cols(&[pooled, queries]);
            let pred = nn::mlp(&mut g, &pp, "predictor", inp, &mut Mode::Eval)?;
            let target = g.leaf(target);
            let diff = g.sub(pred, target);
            let abs = g.abs(diff);
            losses.push(g.mean(abs));
        }
        let stacked = g.concat_rows(&losses);
        let loss = g.mean(stacked);
        Ok((g, loss, sp, pp))
    }

    /// One self-supervised update: L1 masked-embedding loss, AdamW on the
    /// student and predictor, then the EMA teacher update. One mask is shared
    /// by every clip of the batch.
    #[allow(clippy::too_many_arguments)]
    pub fn jepa_step(
        &mut self,
        batch: &[VideoClip],
        config: &JepaConfig,
        optimizer: &mut JepaOptimizer,
        lr: f64,
        wd: f64,
        rng: &mut ChaCha8Rng,
        step_index: usize,
    ) -> Result<JepaStepReport> {
        if batch.is_empty() {
            return Err(Error::Empty("JEPA step needs a nonempty batch".into()));
        }
        let (gt, gh, gw) = {
            let (t, h, w, _) = batch[0].frames.dim();
            self.config.tubelet.grid(t, h, w)?
        };
        let mask = sample_mask(gt * gh * gw, config.mask_ratio, rng)?;
        let (g, loss, sp, pp) = self.jepa_loss_graph(batch, &mask)?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Divergence {
                step: step_index,
                detail: format!("non-finite JEPA loss {value}"),
            });
        }
        let grads = g.backward(loss);
        let gs = sp.gradients(&grads, &self.params.student);
        let gp = pp.gradients(&grads, &self.params.predictor);
        optimizer.student.step(&mut self.params.student, &gs, lr, wd)?;
        optimizer.predictor.step(&mut self.params.predictor, &gp, lr, wd)?;
        ema_update(&mut self.params.teacher, &self.params.student, config.momentum)?;
        Ok(JepaStepReport {
            loss: value,
            masked_tokens: mask.masked.len(),
        })
    }
}

impl VideoBackbone for StubBackbone {
    fn provider(&self) -> &str {
        STUB_PROVIDER
    }

    fn tubelet(&self) -> &TubeletSpec {
        &self.config.tubelet
    }

    fn encode(&self, clip: &VideoClip) -> Result<StateVector> {
        self.encode_with(clip, &self.params)
    }

    fn digest(&self) -> String {
        let mut all = ParamSet::new();
        for (k, v) in self.patch.iter() {
            all.insert(format!("patch/{k}"), v.clone());
        }
        for (k, v) in self.params.teacher.iter() {
            all.insert(format!("teacher/{k}"), v.clone());
        }
        all.digest()
    }

    fn to_checkpoint(&self) -> BackboneCheckpoint {
        let mut arrays = BTreeMap::new();
        arrays.insert("patch".to_string(), self.patch.clone());
        arrays.insert("student".to_string(), self.params.student.clone());
        arrays.insert("teacher".to_string(), self.params.teacher.clone());
        arrays.insert("predictor".to_string(), self.params.predictor.clone());
        BackboneCheckpoint {
            provider: STUB_PROVIDER.to_string(),
            tubelet: self.config.tubelet,
            config: serde_json::to_value(self.config).expect("config serializes"),
            arrays,
        }
    }
}
