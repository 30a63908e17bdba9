//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use fusionbench::backbone::{JepaConfig, JepaOptimizer, StubBackbone, StubBackboneConfig, TubeletSpec};
use fusionbench::checkpoint::Checkpoint;
use fusionbench::cli::{cmd_evaluate, cmd_finetune, cmd_train, EvaluateArgs, RunArgs, TrainArgs};
use fusionbench::datapipe::{make_synthetic_dataset, LabelSource, Split, SynthSpec};
use fusionbench::evaluation::{accuracy, aggregate, compute_report, per_class_iou, MetricsReport, PredictionTrack};
use fusionbench::params::ParamSet;
use fusionbench::backbone::ema_update;
use fusionbench::recipe::{lr_at, wd_at, BalancedSampler, Pipeline, ScheduleSpec};
use fusionbench::stream_encoder::{StreamEncoder, StreamEncoderConfig};
use fusionbench::tokens::StateVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(bool, String), Box<dyn std::error::Error>>;

fn run(results: &mut Vec<bool>, id: usize, name: &str, f: impl FnOnce() -> Check) {
    let t0 = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f));
    let secs = t0.elapsed().as_secs_f64();
    let (pass, detail) = match outcome {
        Ok(Ok((pass, detail))) => (pass, detail),
        Ok(Err(e)) => (false, format!("error: {e}")),
        Err(p) => (false, format!("panic: {}", p.downcast_ref::<String>().cloned().unwrap_or_default())),
    };
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id:>2} {tag}  {name}: {detail} [{secs:.1} s]");
    results.push(pass);
}

fn identity_at_init() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut exact = 0;
    for case in 0..100u64 {
        let d = 4 * rng.gen_range(1..=8);
        let enc = StreamEncoder::new(StreamEncoderConfig::standard(rng.gen_range(1..4), 2, d, case))?;
        let (nm, ns) = (rng.gen_range(1..20), rng.gen_range(1..20));
        let t = common::randn(&mut rng, (nm, d), 3.0);
        let s = StateVector::new(common::randn(&mut rng, (ns, d), 3.0))?;
        let out = enc.encode_streams(&t, &s)?;
        exact += usize::from(out.tokens == s.tokens);
    }
    Ok((exact == 100, format!("{exact}/100 states returned bit-for-bit")))
}

fn gradients() -> Check {
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for seed in 0..3 {
        for (name, case) in [
            ("fusion_layer", common::fusion_layer_case as fn(u64) -> _),
            ("classify", common::classify_case),
            ("combined_loss", common::combined_loss_case),
        ] {
            let (w, _) = case(seed);
            let e = worst.entry(name).or_insert(0.0);
            *e = e.max(w);
        }
    }
    let pass = worst.values().all(|&w| w <= 1e-4);
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    Ok((pass, format!("max relative error {detail} (tol 1e-4, d = 8)")))
}

struct E2eRun {
    _dir: tempfile::TempDir,
    toy: common::ToyRun,
}

impl E2eRun {
    fn new(source: LabelSource, seed: u64) -> Result<Self, Box<dyn std::error::Error>> {
        let dir = tempfile::tempdir()?;
        let toy = common::write_toy_run(dir.path(), &common::toy_synth_spec(source), seed, 10);
        cmd_train(&TrainArgs {
            run: self::run_args(&toy.config_path),
            steps: vec![2, 3, 4],
        })?;
        Ok(Self { _dir: dir, toy })
    }

    fn evaluate(&self, step: u8, with_streams: bool) -> Result<MetricsReport, Box<dyn std::error::Error>> {
        let (_, report) = cmd_evaluate(&EvaluateArgs {
            run: run_args(&self.toy.config_path),
            checkpoint: Some(self.checkpoint(step)),
            include_class13: false,
            with_streams,
            allow_config_mismatch: false,
            split: "test".into(),
        })?;
        Ok(report)
    }

    fn checkpoint(&self, step: u8) -> PathBuf {
        Checkpoint::path_in(&self.toy.config.output_dir, step)
    }
}

fn run_args(config: &Path) -> RunArgs {
    RunArgs {
        config: config.to_path_buf(),
        seed: None,
        out: None,
    }
}

fn state_machine(run: &E2eRun) -> Check {
    let cfg = &run.toy.config;
    let fresh = Pipeline::new(Box::new(StubBackbone::new(cfg.backbone.stub)?)).digests().backbone;
    let ck: Vec<Checkpoint> = (2..=4).map(|s| Checkpoint::load(&run.checkpoint(s))).collect::<Result<_, _>>()?;
    let d = |i: usize| &ck[i].digests;
    let fresh_encoder = StreamEncoder::new(cfg.encoder_config(4))?.digest();
    let checks = [
        ("backbone frozen through steps 2-4", ck.iter().all(|c| c.digests.backbone == fresh)),
        ("decoder unchanged by step 3", d(0).decoder.is_some() && d(0).decoder == d(1).decoder),
        ("encoder unchanged by step 4", d(1).encoder.is_some() && d(1).encoder == d(2).encoder),
        ("encoder trained in step 3", d(1).encoder.as_deref() != Some(fresh_encoder.as_str())),
        ("decoder trained in step 4", d(1).decoder != d(2).decoder),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let detail = if failed.is_empty() {
        format!("{} digest checks hold", checks.len())
    } else {
        format!("violated: {}", failed.join("; "))
    };
    Ok((failed.is_empty(), detail))
}

fn multimodal_benefit(run: &E2eRun) -> Check {
    let video_only = run.evaluate(2, false)?.accuracy;
    let fused = run.evaluate(4, true)?.accuracy;
    let pass = (0.4..=0.6).contains(&video_only) && fused >= 0.9;
    Ok((pass, format!("step-2 video-only acc {video_only:.3} (want [0.4, 0.6]), step-4 multimodal acc {fused:.3} (want >= 0.9)")))
}

fn video_control(run: &E2eRun) -> Check {
    let step2 = run.evaluate(2, false)?.accuracy;
    let step4 = run.evaluate(4, true)?.accuracy;
    let pass = step2 >= 0.9 && step4 >= 0.85;
    Ok((pass, format!("step-2 acc {step2:.3} (want >= 0.9), step-4 acc {step4:.3} (want >= 0.85)")))
}

fn schedules() -> Check {
    // (name, lr_start, lr_max, lr_end, wd_start, wd_end, stretch) as tabulated.
    let table = [
        ("heico-step2", 1e-3, 1e-3, 0.0, 1e-2, 1e-6, 1.0),
        ("inhouse-step2", 1e-5, 1e-3, 0.0, 1e-2, 1e-2, 1.25),
        ("steps34", 1e-6, 1e-4, 0.0, 1e-4, 1e-4, 1.25),
    ];
    let mut problems = Vec::new();
    let mut worst_rel: f64 = 0.0;
    for (name, lr0, lr1, lr2, wd0, wd1, stretch) in table {
        let spec = ScheduleSpec::preset(name).ok_or("missing preset")?;
        for batch in [1usize, 4, 7] {
            let n = spec.total_steps(batch);
            let w = spec.warmup_steps(n);
            let last = n - 1;
            if lr_at(0, n, &spec)? != lr0 {
                problems.push(format!("{name}: lr at step 0"));
            }
            if lr_at(w, n, &spec)? != lr1 {
                problems.push(format!("{name}: lr at end of warmup"));
            }
            if wd_at(0, n, &spec)? != wd0 {
                problems.push(format!("{name}: wd at step 0"));
            }
            let (lr_last, wd_last) = (lr_at(last, n, &spec)?, wd_at(last, n, &spec)?);
            if stretch == 1.0 {
                if lr_last != lr2 || wd_last != wd1 {
                    problems.push(format!("{name}: final values {lr_last:e}, {wd_last:e}"));
                }
            } else {
                let phase = 1.0 / stretch;
                let expect = lr2 + (lr1 - lr2) * 0.5 * (1.0 + (std::f64::consts::PI * phase).cos());
                let rel = ((lr_last - expect) / expect).abs();
                worst_rel = worst_rel.max(rel);
                if rel > 1e-12 {
                    problems.push(format!("{name}: stretched final lr {lr_last:e} vs {expect:e}"));
                }
                if wd0 == wd1 && wd_last != wd1 {
                    problems.push(format!("{name}: constant wd drifted"));
                }
            }
        }
    }
    let detail = if problems.is_empty() {
        format!("endpoints exact for 3 presets x 3 batch sizes, stretched final lr rel err {worst_rel:.1e}")
    } else {
        problems.join("; ")
    };
    Ok((problems.is_empty(), detail))
}

fn metric_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut tracks_checked = 0;
    for group in 0..250 {
        let k = rng.gen_range(2..7);
        let tracks: Vec<PredictionTrack> = (0..4)
            .map(|v| {
                let len = rng.gen_range(1..80);
                common::random_track(&mut rng, &format!("g{group}v{v}"), k, len)
            })
            .collect();
        tracks_checked += tracks.len();
        let oracle = common::oracle_metrics(&tracks);
        for (t, ious) in tracks.iter().zip(&oracle.per_video) {
            for (c, want) in ious.iter().enumerate() {
                let got = per_class_iou(t, c)?;
                match (got, want) {
                    (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                    (None, None) => {}
                    _ => return Ok((false, format!("presence mismatch for class {c} of {}", t.video_id))),
                }
            }
        }
        worst = worst.max((accuracy(&tracks)? - oracle.accuracy).abs());
        let agg = aggregate(&oracle.pooled)?;
        let (mean, median, q) = common::oracle_aggregate(&oracle.pooled);
        worst = worst.max((agg.aiou - mean).abs()).max((agg.miou - median).abs()).max((agg.qiou - q).abs());
        let report = compute_report(&tracks, None, true)?;
        worst = worst.max((report.aiou - mean).abs()).max((report.accuracy - oracle.accuracy).abs());
    }
    let hand = PredictionTrack::from_labels("hand", 2, &[0, 0, 1, 1], &[0, 1, 1, 1])?;
    let hand_ok = per_class_iou(&hand, 0)? == Some(0.5)
        && (per_class_iou(&hand, 1)?.unwrap_or(f64::NAN) - 2.0 / 3.0).abs() <= 1e-12
        && accuracy(std::slice::from_ref(&hand))? == 0.75;
    let pass = worst <= 1e-12 && hand_ok && tracks_checked >= 1000;
    Ok((pass, format!("{tracks_checked} random tracks, max |diff| {worst:.1e}; hand case (1/2, 2/3, 0.75) {}", if hand_ok { "ok" } else { "wrong" })))
}

fn ema() -> Check {
    let m = 0.9;
    let mut student = ParamSet::new();
    student.insert("w", ndarray::arr2(&[[0.3, -1.2]]));
    let mut teacher = student.clone();
    let (mut t0, mut t1) = (0.3f64, -1.2f64);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        // Student follows gradient descent on (w0 - 1)^2 + (w1 + 2)^2 with a
        // step-dependent rate.
        let w = student.get_mut("w")?;
        let rate = 0.05 + 0.01 * (k % 5) as f64;
        w[[0, 0]] -= rate * 2.0 * (w[[0, 0]] - 1.0);
        w[[0, 1]] -= rate * 2.0 * (w[[0, 1]] + 2.0);
        let (s0, s1) = (w[[0, 0]], w[[0, 1]]);
        ema_update(&mut teacher, &student, m)?;
        t0 = m * t0 + (1.0 - m) * s0;
        t1 = m * t1 + (1.0 - m) * s1;
        let got = teacher.get("w")?;
        worst = worst.max((got[[0, 0]] - t0).abs()).max((got[[0, 1]] - t1).abs());
    }
    Ok((worst <= 1e-12, format!("max deviation from direct recursion over 100 steps {worst:.1e}")))
}

fn balanced_sampler() -> Check {
    let labels: Vec<usize> = (0..1000).map(|i| usize::from(i % 100 == 0)).collect();
    let sampler = BalancedSampler::new(&labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draws = 10_000;
    let ones = (0..draws).filter(|_| labels[sampler.sample(&mut rng)] == 1).count();
    let f1 = ones as f64 / draws as f64;
    let f0 = 1.0 - f1;
    let pass = (f0 - 0.5).abs() <= 0.02 && (f1 - 0.5).abs() <= 0.02;
    Ok((pass, format!("99:1 data, {draws} draws: class 0 {f0:.4}, class 1 {f1:.4}")))
}

fn toy_jepa() -> Check {
    let spec = SynthSpec {
        n_videos: 4,
        duration: 20.0,
        ..SynthSpec::new(LabelSource::Video)
    };
    let ds = make_synthetic_dataset(5, &spec)?;
    let clip = fusionbench::datapipe::ClipSpec { frames: 8, interval: 1.0 };
    let clips: Vec<_> = ds.clips(Split::Train, &clip)?.into_iter().step_by(5).take(8).map(|c| c.clip).collect();
    if clips.len() != 8 {
        return Ok((false, format!("only {} clips available", clips.len())));
    }
    let mut backbone = StubBackbone::new(StubBackboneConfig {
        tubelet: TubeletSpec {
            temporal_width: 2,
            spatial_size: 4,
            embed_dim: 32,
        },
        depth: 1,
        predictor_hidden: 32,
        seed: 5,
        ..StubBackboneConfig::default()
    })?;
    let jepa = JepaConfig::default();
    let mut opt = JepaOptimizer::new(jepa.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (steps, batch) = (50, 4);
    let per_epoch = clips.len() / batch;
    let mut epoch_sums = vec![0.0; steps / per_epoch];
    for step in 0..steps {
        let epoch = step / per_epoch;
        let start = (step % per_epoch) * batch;
        let r = backbone.jepa_step(&clips[start..start + batch], &jepa, &mut opt, 1e-3, 0.04, &mut rng, step)?;
        epoch_sums[epoch] += r.loss / per_epoch as f64;
    }
    let (first, last) = (epoch_sums[0], *epoch_sums.last().unwrap());
    Ok((last < first, format!("epoch-mean L1 first {first:.4}, after {steps} steps {last:.4}")))
}

fn pipeline_once(dir: &Path) -> Result<(Vec<u8>, Vec<String>), Box<dyn std::error::Error>> {
    let spec = SynthSpec {
        n_videos: 6,
        duration: 30.0,
        ..SynthSpec::new(LabelSource::Streams)
    };
    let toy = common::write_toy_run(dir, &spec, 21, 2);
    let args = run_args(&toy.config_path);
    cmd_finetune(&args)?;
    cmd_train(&TrainArgs {
        run: run_args(&toy.config_path),
        steps: vec![2, 3, 4],
    })?;
    let (path, _) = cmd_evaluate(&EvaluateArgs {
        run: args,
        checkpoint: None,
        include_class13: false,
        with_streams: true,
        allow_config_mismatch: false,
        split: "test".into(),
    })?;
    let hashes = (1..=4)
        .map(|s| Checkpoint::load(&Checkpoint::path_in(&toy.config.output_dir, s)).map(|c| c.hash()))
        .collect::<Result<_, _>>()?;
    Ok((fs::read(path)?, hashes))
}

fn determinism() -> Check {
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    let (ra, ha) = pipeline_once(a.path())?;
    let (rb, hb) = pipeline_once(b.path())?;
    let pass = ra == rb && ha == hb;
    Ok((pass, format!("report bytes identical: {}, checkpoint hashes identical: {} ({} bytes)", ra == rb, ha == hb, ra.len())))
}

fn main() {
    let mut results = Vec::new();
    run(&mut results, 1, "identity at init", identity_at_init);
    run(&mut results, 2, "gradient correctness", gradients);

    let t0 = Instant::now();
    let streams = E2eRun::new(LabelSource::Streams, 3);
    println!("   (streams-signal run: steps 2, 3, 4 trained in {:.1} s)", t0.elapsed().as_secs_f64());
    match &streams {
        Ok(r) => {
            run(&mut results, 3, "state-machine contracts", || state_machine(r));
            run(&mut results, 4, "multimodal benefit", || multimodal_benefit(r));
        }
        Err(e) => {
            let msg = format!("{e}");
            run(&mut results, 3, "state-machine contracts", || Err(msg.clone().into()));
            run(&mut results, 4, "multimodal benefit", || Err(msg.into()));
        }
    }
    run(&mut results, 5, "video-signal control", || video_control(&E2eRun::new(LabelSource::Video, 4)?));
    run(&mut results, 6, "scheduler fidelity", schedules);
    run(&mut results, 7, "metric oracle equivalence", metric_oracle);
    run(&mut results, 8, "EMA correctness", ema);
    run(&mut results, 9, "balanced sampler", balanced_sampler);
    run(&mut results, 10, "toy JEPA loop", toy_jepa);
    run(&mut results, 11, "end-to-end determinism", determinism);

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
