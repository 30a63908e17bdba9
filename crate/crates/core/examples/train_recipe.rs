// Supervised steps 2, 3 and 4 on stream-signal synthetic data, with the
// frozen/fluid/hot contract checked after every step.

use fusionbench::backbone::{StubBackbone, StubBackboneConfig, TubeletSpec};
use fusionbench::datapipe::{make_synthetic_dataset, ClipSpec, LabelSource, Split, SynthSpec};
use fusionbench::decoder::{AttentiveClassifier, DecoderConfig};
use fusionbench::recipe::{prepare_examples, verify_state_machine, Pipeline, ScheduleSpec, StepPlan, TrainOptions};
use fusionbench::stream_encoder::{StreamEncoder, StreamEncoderConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSpec { n_videos: 8, duration: 40.0, segment_min: 4.0, segment_max: 8.0, ..SynthSpec::new(LabelSource::Streams) };
    let ds = make_synthetic_dataset(3, &spec)?;
    let clip = ClipSpec { frames: 8, interval: 1.0 };
    let train = ds.clips(Split::Train, &clip)?;
    let test = ds.clips(Split::Test, &clip)?;

    let d = 32;
    let backbone = StubBackbone::new(StubBackboneConfig {
        tubelet: TubeletSpec { temporal_width: 2, spatial_size: 4, embed_dim: d },
        depth: 1,
        predictor_hidden: d,
        ..StubBackboneConfig::default()
    })?;
    let mut pipeline = Pipeline::new(Box::new(backbone));
    pipeline.decoder = Some(AttentiveClassifier::new(DecoderConfig::new(d, 4, 2, 1))?);
    let enc_cfg = StreamEncoderConfig::standard(spec.n_channels, 2, d, 2);
    let examples = prepare_examples(pipeline.backbone.as_ref(), &train, Some(&enc_cfg.tokenizer))?;

    let opts = TrainOptions { batch_size: 8, seed: 3, ..TrainOptions::default() };
    let schedule = |lr_max| ScheduleSpec { epochs: 4, samples_per_epoch: 256, lr_start: 1e-4, lr_max, ..ScheduleSpec::steps34() };
    for (step, lr) in [(2u8, 3e-3), (3, 3e-3), (4, 1e-3)] {
        if step == 3 {
            pipeline.encoder = Some(StreamEncoder::new(enc_cfg)?);
        }
        let plan = StepPlan::for_step(step, schedule(lr), 1e-3)?;
        let out = pipeline.run_step(&plan, &examples, &opts)?;
        verify_state_machine(&plan, &out.before, &out.after)?;
        let with_streams = step >= 3;
        let correct = test.iter().filter(|c| pipeline.predict(c, with_streams).ok() == Some(c.label)).count();
        println!(
            "step {step}: last loss {:.4}, test accuracy {:.3} ({})",
            out.log.last().map_or(f64::NAN, |r| r.loss),
            correct as f64 / test.len() as f64,
            if with_streams { "video + streams" } else { "video only" }
        );
    }
    Ok(())
}
