// Checkpoint round trip and config hashing.

use std::collections::BTreeMap;

use fusionbench::backbone::{BackboneRegistry, StubBackbone, StubBackboneConfig};
use fusionbench::checkpoint::{Checkpoint, OptimizerState};
use fusionbench::config::RunConfig;
use fusionbench::datapipe::ClipSpec;
use fusionbench::recipe::Pipeline;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let cfg = RunConfig::new(dir.path().join("manifest.json"), dir.path().join("run"));
    let hash = cfg.hash();
    println!("config hash {}", &hash[..16]);

    let pipeline = Pipeline::new(Box::new(StubBackbone::new(StubBackboneConfig::default())?));
    let ck = Checkpoint::capture(2, &hash, ClipSpec::default(), &pipeline, OptimizerState::Supervised { groups: BTreeMap::new() }, ChaCha8Rng::seed_from_u64(0));
    let path = Checkpoint::path_in(&cfg.output_dir, 2);
    ck.save(&path)?;
    let back = Checkpoint::load(&path)?;
    back.check_config(&hash)?;
    let restored = back.restore(&BackboneRegistry::default())?;
    println!("restored digests match: {}", restored.digests() == pipeline.digests());
    println!("other config rejected: {}", back.check_config("deadbeef").is_err());
    Ok(())
}
