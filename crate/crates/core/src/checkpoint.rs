//! Per-step checkpoints.
//!
//! A checkpoint holds the complete pipeline after a step (backbone, stream
//! encoder, decoder), the optimizer and RNG state that produced it, and the
//! hash of the config it was trained under.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{BackboneCheckpoint, BackboneRegistry, JepaOptimizer};
use crate::datapipe::ClipSpec;
use crate::decoder::AttentiveClassifier;
use crate::error::{Error, Result};
use crate::optim::AdamW;
use crate::recipe::{ComponentDigests, Pipeline};
use crate::stream_encoder::StreamEncoder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerState {
    Jepa(JepaOptimizer),
    Supervised { groups: BTreeMap<String, AdamW> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: u8,
    pub config_hash: String,
    pub clip: ClipSpec,
    pub backbone: BackboneCheckpoint,
    pub encoder: Option<StreamEncoder>,
    pub decoder: Option<AttentiveClassifier>,
    pub completed: Vec<u8>,
    pub digests: ComponentDigests,
    pub optimizer: OptimizerState,
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn file_name(step: u8) -> String {
        format!("step{step}.ckpt.json")
    }

    pub fn path_in(dir: &Path, step: u8) -> PathBuf {
        dir.join(Self::file_name(step))
    }

    pub fn capture(
        step: u8,
        config_hash: &str,
        clip: ClipSpec,
        pipeline: &Pipeline,
        optimizer: OptimizerState,
        rng: ChaCha8Rng,
    ) -> Self {
        Self {
            step,
            config_hash: config_hash.to_string(),
            clip,
            backbone: pipeline.backbone.to_checkpoint(),
            encoder: pipeline.encoder.clone(),
            decoder: pipeline.decoder.clone(),
            completed: pipeline.completed.clone(),
            digests: pipeline.digests(),
            optimizer,
            rng,
        }
    }

    /// Rebuilds the pipeline and checks the stored digests.
    pub fn restore(&self, registry: &BackboneRegistry) -> Result<Pipeline> {
        let pipeline = Pipeline {
            backbone: registry.load(&self.backbone)?,
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            completed: self.completed.clone(),
        };
        if pipeline.digests() != self.digests {
            return Err(Error::InvalidArgument(format!(
                "checkpoint for step {} does not match its recorded digests",
                self.step
            )));
        }
        Ok(pipeline)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::schema(path, "checkpoint", e.to_string()))
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("checkpoint serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// Errors unless the checkpoint was produced under `config_hash`.
    pub fn check_config(&self, config_hash: &str) -> Result<()> {
        if self.config_hash != config_hash {
            return Err(Error::ConfigMismatch {
                artifact: self.config_hash.clone(),
                config: config_hash.to_string(),
            });
        }
        Ok(())
    }
}
