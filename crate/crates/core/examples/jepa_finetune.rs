// Self-supervised JEPA updates on a stub backbone: masked-token L1 loss,
// AdamW on student and predictor, EMA teacher.

use fusionbench::backbone::{JepaConfig, JepaOptimizer, StubBackbone, StubBackboneConfig, TubeletSpec, VideoBackbone};
use fusionbench::datapipe::{make_synthetic_dataset, ClipSpec, LabelSource, Split, SynthSpec};
use fusionbench::recipe::{lr_at, wd_at, ScheduleSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSpec { n_videos: 4, duration: 20.0, ..SynthSpec::new(LabelSource::Video) };
    let ds = make_synthetic_dataset(1, &spec)?;
    let clips: Vec<_> = ds.clips(Split::Train, &ClipSpec { frames: 8, interval: 1.0 })?.into_iter().map(|c| c.clip).take(8).collect();

    let mut backbone = StubBackbone::new(StubBackboneConfig {
        tubelet: TubeletSpec { temporal_width: 2, spatial_size: 4, embed_dim: 32 },
        depth: 1,
        predictor_hidden: 32,
        ..StubBackboneConfig::default()
    })?;
    let schedule = ScheduleSpec {
        epochs: 10,
        samples_per_epoch: clips.len(),
        lr_start: 1e-4,
        lr_max: 1e-3,
        ..ScheduleSpec::steps34()
    };
    let jepa = JepaConfig::default();
    let mut opt = JepaOptimizer::new(jepa.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = 4;
    let total = schedule.total_steps(batch);
    let before = backbone.digest();
    for step in 0..total {
        let start = (step * batch) % clips.len();
        let r = backbone.jepa_step(&clips[start..start + batch], &jepa, &mut opt, lr_at(step, total, &schedule)?, wd_at(step, total, &schedule)?, &mut rng, step)?;
        if step % 4 == 0 || step + 1 == total {
            println!("step {step:>2}  L1 {:.4}  masked tokens {}", r.loss, r.masked_tokens);
        }
    }
    println!("backbone digest {} -> {}", &before[..12], &backbone.digest()[..12]);
    Ok(())
}
