//! Run configuration.
//!
//! A run config is a JSON document; relative paths resolve against the
//! config file's directory. Schedules are given either as a preset name, as a
//! full object, or as `{"preset": NAME, ...overrides}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::backbone::{JepaConfig, StubBackboneConfig, TubeletSpec, STUB_PROVIDER};
use crate::datapipe::{ClipSpec, SynthSpec};
use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::optim::AdamWConfig;
use crate::recipe::{ScheduleSpec, DEFAULT_LAMBDA};
use crate::stream_encoder::{StreamEncoderConfig, StreamTokenizerSpec};

/// Preset name, full spec, or preset plus overridden fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleRef {
    Preset(String),
    Fields(serde_json::Map<String, Value>),
}

impl ScheduleRef {
    pub fn resolve(&self) -> Result<ScheduleSpec> {
        let unknown = |n: &str| Error::InvalidArgument(format!("unknown schedule preset `{n}`"));
        let spec: ScheduleSpec = match self {
            ScheduleRef::Preset(name) => ScheduleSpec::preset(name).ok_or_else(|| unknown(name))?,
            ScheduleRef::Fields(fields) => {
                let mut base = match fields.get("preset") {
                    Some(Value::String(name)) => match serde_json::to_value(ScheduleSpec::preset(name).ok_or_else(|| unknown(name))?)? {
                        Value::Object(m) => m,
                        _ => unreachable!("schedule serializes to an object"),
                    },
                    Some(other) => return Err(Error::InvalidArgument(format!("preset must be a name, got {other}"))),
                    None => serde_json::Map::new(),
                };
                for (k, v) in fields {
                    if k != "preset" {
                        base.insert(k.clone(), v.clone());
                    }
                }
                serde_json::from_value(Value::Object(base))?
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSection {
    #[serde(default = "default_provider")]
    pub provider: String,
    /// Backbone checkpoint to start from; a fresh seeded stub otherwise.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub stub: StubBackboneConfig,
}

fn default_provider() -> String {
    STUB_PROVIDER.to_string()
}

impl Default for BackboneSection {
    fn default() -> Self {
        Self {
            provider: default_provider(),
            checkpoint: None,
            stub: StubBackboneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    /// Pretraining schedule; the finetuning schedule divides its learning
    /// rates by 100 and weight decay by 10.
    pub pretrain_schedule: ScheduleRef,
    #[serde(default)]
    pub jepa: JepaConfig,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            pretrain_schedule: ScheduleRef::Preset("heico-step2".into()),
            jepa: JepaConfig::default(),
            batch_size: default_batch(),
        }
    }
}

fn default_batch() -> usize {
    4
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    pub mlp_ratio: usize,
    /// Window in samples; defaults to the tubelet's temporal width.
    #[serde(default)]
    pub window: Option<usize>,
    pub stride: usize,
    pub temporal_encoding: bool,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            heads: 4,
            layers: 4,
            dropout: 0.2,
            mlp_ratio: 2,
            window: None,
            stride: 1,
            temporal_encoding: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSection {
    pub heads: usize,
    pub queries: usize,
    pub depth: usize,
    pub mlp_ratio: usize,
}

impl Default for DecoderSection {
    fn default() -> Self {
        Self {
            heads: 4,
            queries: 1,
            depth: 1,
            mlp_ratio: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepsSection {
    #[serde(default = "default_step2")]
    pub step2: ScheduleRef,
    #[serde(default = "default_step34")]
    pub step3: ScheduleRef,
    #[serde(default = "default_step34")]
    pub step4: ScheduleRef,
}

fn default_step2() -> ScheduleRef {
    ScheduleRef::Preset("heico-step2".into())
}

fn default_step34() -> ScheduleRef {
    ScheduleRef::Preset("steps34".into())
}

impl Default for StepsSection {
    fn default() -> Self {
        Self {
            step2: default_step2(),
            step3: default_step34(),
            step4: default_step34(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub prefetch: bool,
    pub optimizer: AdamWConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            batch_size: 4,
            prefetch: true,
            optimizer: AdamWConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub clip: ClipSpec,
    #[serde(default)]
    pub backbone: BackboneSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub decoder: DecoderSection,
    #[serde(default)]
    pub steps: StepsSection,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub train: TrainSection,
    /// Used by `synth` when present.
    #[serde(default)]
    pub synth: Option<SynthSpec>,
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

impl RunConfig {
    /// Minimal config around a manifest with every default.
    pub fn new(manifest: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            output_dir: output_dir.into(),
            seed: 0,
            clip: ClipSpec::default(),
            backbone: BackboneSection::default(),
            finetune: FinetuneSection::default(),
            encoder: EncoderSection::default(),
            decoder: DecoderSection::default(),
            steps: StepsSection::default(),
            lambda: DEFAULT_LAMBDA,
            train: TrainSection::default(),
            synth: None,
        }
    }

    /// Parses and resolves relative paths against the file's directory.
    /// Path existence is checked by [`RunConfig::check_paths`].
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::schema(path, "file", e.to_string()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| {
            Error::schema(path, format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        let root = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.manifest = root.join(&cfg.manifest);
        cfg.output_dir = root.join(&cfg.output_dir);
        if let Some(c) = &cfg.backbone.checkpoint {
            cfg.backbone.checkpoint = Some(root.join(c));
        }
        cfg.validate(path)?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self, origin: &Path) -> Result<()> {
        let field_err = |field: &str, e: Error| Error::schema(origin, field, e.to_string());
        for (field, s) in [
            ("steps.step2", &self.steps.step2),
            ("steps.step3", &self.steps.step3),
            ("steps.step4", &self.steps.step4),
            ("finetune.pretrain_schedule", &self.finetune.pretrain_schedule),
        ] {
            s.resolve().map_err(|e| field_err(field, e))?;
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::schema(origin, "lambda", "must be finite and ≥ 0"));
        }
        if self.train.batch_size == 0 || self.finetune.batch_size == 0 {
            return Err(Error::schema(origin, "batch_size", "must be ≥ 1"));
        }
        if self.clip.frames == 0 || !(self.clip.interval > 0.0) {
            return Err(Error::schema(origin, "clip", "frames and interval must be positive"));
        }
        if !self.clip.frames.is_multiple_of(self.backbone.stub.tubelet.temporal_width) {
            return Err(Error::schema(
                origin,
                "clip.frames",
                format!("not divisible by tubelet width {}", self.backbone.stub.tubelet.temporal_width),
            ));
        }
        if !(0.0..1.0).contains(&self.encoder.dropout) {
            return Err(Error::schema(origin, "encoder.dropout", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Every referenced input must exist at launch.
    pub fn check_paths(&self, origin: &Path) -> Result<()> {
        if !self.manifest.is_file() {
            return Err(Error::schema(origin, "manifest", format!("{} does not exist", self.manifest.display())));
        }
        if let Some(c) = &self.backbone.checkpoint {
            if !c.is_file() {
                return Err(Error::schema(origin, "backbone.checkpoint", format!("{} does not exist", c.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical (sorted-key, compact) JSON form.
    ///
    /// The output directory is left out, and input files enter by content
    /// hash rather than by path, so moving a run does not change its hash.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let obj = value.as_object_mut().expect("config is an object");
        obj.remove("output_dir");
        obj.insert("manifest".into(), Value::String(file_identity(&self.manifest)));
        if let Some(c) = &self.backbone.checkpoint {
            obj["backbone"]["checkpoint"] = Value::String(file_identity(c));
        }
        canonical_hash(&value)
    }

    pub fn schedule(&self, step: u8) -> Result<ScheduleSpec> {
        match step {
            1 => Ok(ScheduleSpec::finetune_from(&self.finetune.pretrain_schedule.resolve()?)),
            2 => self.steps.step2.resolve(),
            3 => self.steps.step3.resolve(),
            4 => self.steps.step4.resolve(),
            other => Err(Error::InvalidArgument(format!("no step {other}"))),
        }
    }

    pub fn tubelet(&self) -> TubeletSpec {
        self.backbone.stub.tubelet
    }

    pub fn decoder_config(&self, num_classes: usize) -> DecoderConfig {
        DecoderConfig {
            embed_dim: self.tubelet().embed_dim,
            heads: self.decoder.heads,
            num_classes,
            queries: self.decoder.queries,
            depth: self.decoder.depth,
            mlp_ratio: self.decoder.mlp_ratio,
            seed: self.seed.wrapping_add(2),
        }
    }

    pub fn encoder_config(&self, channels: usize) -> StreamEncoderConfig {
        let e = &self.encoder;
        StreamEncoderConfig {
            channels,
            tokenizer: StreamTokenizerSpec {
                window: e.window.unwrap_or(self.tubelet().temporal_width),
                stride: e.stride,
                embed_dim: self.tubelet().embed_dim,
                temporal_encoding: e.temporal_encoding,
            },
            heads: e.heads,
            layers: e.layers,
            dropout: e.dropout,
            mlp_ratio: e.mlp_ratio,
            seed: self.seed.wrapping_add(3),
        }
    }
}

/// `sha256:<hex>` of a file's bytes, or its path when unreadable.
fn file_identity(path: &Path) -> String {
    match fs::read(path) {
        Ok(bytes) => format!("sha256:{}", hex::encode(Sha256::digest(bytes))),
        Err(_) => path.display().to_string(),
    }
}

/// Hash of a JSON value serialized with sorted object keys.
pub fn canonical_hash(value: &Value) -> String {
    // serde_json's default map is ordered by key, so a round trip through
    // `Value` canonicalizes key order.
    let canonical: Value = serde_json::from_str(&value.to_string()).expect("valid json");
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}
