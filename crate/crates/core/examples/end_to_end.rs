// synth -> finetune -> train 2,3,4 -> evaluate through the command functions
// the binary uses, with a toy-scale config.

use fusionbench::cli::{cmd_evaluate, cmd_finetune, cmd_synth, cmd_train, EvaluateArgs, RunArgs, SynthArgs, TrainArgs};
use fusionbench::datapipe::LabelSource;

const CONFIG: &str = r#"{
  "manifest": "data/manifest.json",
  "output_dir": "run",
  "seed": 1,
  "clip": {"frames": 8, "interval": 1.0},
  "backbone": {"stub": {"tubelet": {"temporal_width": 2, "spatial_size": 4, "embed_dim": 32},
                        "channels": 3, "depth": 1, "heads": 4, "mlp_ratio": 2, "predictor_hidden": 32, "seed": 1}},
  "finetune": {"pretrain_schedule": {"preset": "steps34", "epochs": 2, "samples_per_epoch": 16, "lr_max": 0.1}, "batch_size": 4},
  "steps": {
    "step2": {"preset": "heico-step2", "epochs": 3, "samples_per_epoch": 128, "lr_max": 3e-3},
    "step3": {"preset": "steps34", "epochs": 3, "samples_per_epoch": 128, "lr_max": 3e-3},
    "step4": {"preset": "steps34", "epochs": 2, "samples_per_epoch": 128, "lr_max": 1e-3}
  },
  "train": {"batch_size": 8, "prefetch": true, "optimizer": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8}}
}"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    cmd_synth(&SynthArgs {
        config: None,
        seed: 1,
        out: dir.path().join("data"),
        label_source: Some(LabelSource::Streams),
        videos: Some(8),
        duration: Some(30.0),
        classes: None,
    })?;
    let config = dir.path().join("config.json");
    std::fs::write(&config, CONFIG)?;
    let run = || RunArgs { config: config.clone(), seed: None, out: None };

    cmd_finetune(&run())?;
    cmd_train(&TrainArgs { run: run(), steps: vec![2, 3, 4] })?;
    for with_streams in [false, true] {
        let (_, report) = cmd_evaluate(&EvaluateArgs {
            run: run(),
            checkpoint: None,
            include_class13: false,
            with_streams,
            allow_config_mismatch: false,
            split: "test".into(),
        })?;
        println!("with streams {with_streams}: accuracy {:.3}", report.accuracy);
    }
    Ok(())
}
