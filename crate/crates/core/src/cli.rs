//! Command-line front end: `finetune`, `train`, `evaluate`, `synth`, `plot`.
//!
//! Exit codes: 0 success, 2 config/schema/input error, 3 missing
//! prerequisite, 4 numerical divergence.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{BackboneCheckpoint, BackboneRegistry, JepaOptimizer, StubBackbone, VideoBackbone};
use crate::checkpoint::{Checkpoint, OptimizerState};
use crate::config::RunConfig;
use crate::datapipe::{make_synthetic_dataset, ClipSample, Dataset, LabelSource, Split, SynthSpec};
use crate::decoder::AttentiveClassifier;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_model, render_table, EvalOptions, MetricsReport};
use crate::plot;
use crate::recipe::{lr_at, prepare_examples, wd_at, LogRecord, Pipeline, StepPlan, TrainOptions};
use crate::stream_encoder::StreamEncoder;

/// Environment variable that forces deterministic mode.
pub const DETERMINISTIC_ENV: &str = "FUSIONBENCH_DETERMINISTIC";

#[derive(Debug, Parser)]
#[command(name = "fusionbench", version, about = "Multimodal video + data-stream training recipe")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Self-supervised JEPA finetuning of the backbone on manifest videos.
    Finetune(RunArgs),
    /// Supervised steps 2, 3 and 4.
    Train(TrainArgs),
    /// Dense-clip evaluation of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Render dataset composition and training curves as SVG.
    Plot(PlotArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Finetune(_) => "finetune",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Synth(_) => "synth",
            Command::Plot(_) => "plot",
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated subset of 2,3,4.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    pub steps: Vec<u8>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Checkpoint to evaluate; defaults to the latest step in the output directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub include_class13: bool,
    #[arg(long)]
    pub with_streams: bool,
    /// Evaluate even if the checkpoint was trained under another config.
    #[arg(long)]
    pub allow_config_mismatch: bool,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Optional run config whose `synth` section supplies the spec.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub label_source: Option<LabelSource>,
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Run config; its manifest is plotted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Line-delimited JSON training log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn deterministic() -> bool {
    std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v == "1")
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Prerequisite(_) => 3,
        Error::Divergence { .. } => 4,
        _ => 2,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Finetune(a) => cmd_finetune(a).map(|_| ()),
        Command::Train(a) => cmd_train(a).map(|_| ()),
        Command::Evaluate(a) => cmd_evaluate(a).map(|_| ()),
        Command::Synth(a) => cmd_synth(a).map(|_| ()),
        Command::Plot(a) => cmd_plot(a).map(|_| ()),
    }
}

/// Loads the config, applies overrides and checks input paths.
pub fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if deterministic() {
        cfg.train.prefetch = false;
    }
    cfg.check_paths(&args.config)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    Ok(cfg)
}

fn write_jsonl(path: &Path, records: &[LogRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn stub_backbone(cfg: &RunConfig) -> Result<StubBackbone> {
    if cfg.backbone.provider != crate::backbone::STUB_PROVIDER {
        return Err(Error::UnknownProvider(cfg.backbone.provider.clone()));
    }
    match &cfg.backbone.checkpoint {
        Some(p) => StubBackbone::from_checkpoint(&load_backbone_checkpoint(p)?),
        None => StubBackbone::new(cfg.backbone.stub),
    }
}

/// Accepts either a full step checkpoint or a bare backbone checkpoint.
fn load_backbone_checkpoint(path: &Path) -> Result<BackboneCheckpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if let Ok(ck) = serde_json::from_slice::<Checkpoint>(&bytes) {
        return Ok(ck.backbone);
    }
    serde_json::from_slice(&bytes).map_err(|e| Error::schema(path, "backbone", e.to_string()))
}

/// Epoch-averaged losses from a log.
pub fn epoch_means(log: &[LogRecord]) -> Vec<f64> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for r in log {
        if out.len() <= r.epoch {
            out.resize(r.epoch + 1, (0.0, 0));
        }
        out[r.epoch].0 += r.loss;
        out[r.epoch].1 += 1;
    }
    out.into_iter().filter(|(_, n)| *n > 0).map(|(s, n)| s / n as f64).collect()
}

/// Step 1: JEPA finetuning on the training videos, labels ignored.
pub fn cmd_finetune(args: &RunArgs) -> Result<PathBuf> {
    let cfg = load_config(args)?;
    let dataset = Dataset::load(&cfg.manifest)?;
    let mut backbone = stub_backbone(&cfg)?;
    let clips: Vec<ClipSample> = dataset.clips(Split::Train, &cfg.clip)?;
    let schedule = cfg.schedule(1)?;
    let bs = cfg.finetune.batch_size;
    let total = schedule.total_steps(bs);
    let per_epoch = schedule.steps_per_epoch(bs);
    let mut opt = JepaOptimizer::new(cfg.finetune.jepa.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut log = Vec::with_capacity(total);
    log::info!("finetune: {} clips, {total} steps", clips.len());
    for step in 0..total {
        let lr = lr_at(step, total, &schedule)?;
        let wd = wd_at(step, total, &schedule)?;
        let picks = index::sample(&mut rng, clips.len(), bs.min(clips.len()));
        let batch: Vec<_> = picks.iter().map(|i| clips[i].clip.clone()).collect();
        let r = backbone.jepa_step(&batch, &cfg.finetune.jepa, &mut opt, lr, wd, &mut rng, step)?;
        log.push(LogRecord {
            step_id: 1,
            step,
            epoch: step / per_epoch,
            loss: r.loss,
            task_loss: r.loss,
            penalty: 0.0,
            lr,
            wd,
        });
    }
    write_jsonl(&cfg.output_dir.join("log_step1.jsonl"), &log)?;
    let pipeline = Pipeline::new(Box::new(backbone));
    let ck = Checkpoint::capture(1, &cfg.hash(), cfg.clip, &pipeline, OptimizerState::Jepa(opt), rng);
    let path = Checkpoint::path_in(&cfg.output_dir, 1);
    ck.save(&path)?;
    let means = epoch_means(&log);
    println!("finetune: {total} steps, epoch mean L1 {:?}", means);
    println!("checkpoint: {}", path.display());
    Ok(path)
}

/// Pipeline at the start of `step`: fresh for step 2, else the previous
/// step's checkpoint.
fn pipeline_for(cfg: &RunConfig, step: u8, num_classes: usize, registry: &BackboneRegistry) -> Result<Pipeline> {
    if step == 2 {
        let step1 = Checkpoint::path_in(&cfg.output_dir, 1);
        let backbone: Box<dyn VideoBackbone> = if cfg.backbone.checkpoint.is_some() {
            Box::new(stub_backbone(cfg)?)
        } else if step1.is_file() {
            log::info!("using finetuned backbone {}", step1.display());
            Checkpoint::load(&step1)?.restore(registry)?.backbone
        } else {
            Box::new(stub_backbone(cfg)?)
        };
        let mut p = Pipeline::new(backbone);
        p.decoder = Some(AttentiveClassifier::new(cfg.decoder_config(num_classes))?);
        return Ok(p);
    }
    let prev = Checkpoint::path_in(&cfg.output_dir, step - 1);
    if !prev.is_file() {
        return Err(Error::Prerequisite(format!(
            "step {step} needs the step-{} checkpoint {}",
            step - 1,
            prev.display()
        )));
    }
    let ck = Checkpoint::load(&prev)?;
    ck.check_config(&cfg.hash())?;
    ck.restore(registry)
}

/// Runs the requested supervised steps in order; returns checkpoint paths.
pub fn cmd_train(args: &TrainArgs) -> Result<Vec<PathBuf>> {
    let cfg = load_config(&args.run)?;
    let mut steps = args.steps.clone();
    steps.sort_unstable();
    steps.dedup();
    if steps.is_empty() || steps.iter().any(|s| !(2..=4).contains(s)) {
        return Err(Error::schema(&args.run.config, "--steps", "must be a nonempty subset of 2,3,4"));
    }
    if steps.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::schema(&args.run.config, "--steps", "steps must be consecutive"));
    }
    let dataset = Dataset::load(&cfg.manifest)?;
    let num_classes = dataset.manifest.task.num_classes();
    let registry = BackboneRegistry::default();
    let config_hash = cfg.hash();
    let opts = TrainOptions {
        batch_size: cfg.train.batch_size,
        seed: cfg.seed,
        optimizer: cfg.train.optimizer,
        prefetch: cfg.train.prefetch,
    };
    let clips = dataset.clips(Split::Train, &cfg.clip)?;
    let channels = clips
        .first()
        .and_then(|c| c.streams.as_ref())
        .map(|s| s.num_channels());
    let needs_streams = steps.iter().any(|&s| s >= 3);
    if needs_streams && channels.is_none() {
        return Err(Error::schema(&cfg.manifest, "videos[].streams", "steps 3 and 4 need data streams"));
    }
    let encoder_cfg = channels.map(|c| cfg.encoder_config(c));

    let mut pipeline = pipeline_for(&cfg, steps[0], num_classes, &registry)?;
    let examples = prepare_examples(
        pipeline.backbone.as_ref(),
        &clips,
        encoder_cfg.as_ref().filter(|_| needs_streams).map(|c| &c.tokenizer),
    )?;
    let mut paths = Vec::new();
    for &step in &steps {
        if step == 3 && pipeline.encoder.is_none() {
            pipeline.encoder = Some(StreamEncoder::new(encoder_cfg.expect("checked above"))?);
        }
        let plan = StepPlan::for_step(step, cfg.schedule(step)?, cfg.lambda)?;
        log::info!("step {step}: {} examples, {} optimizer steps", examples.len(), plan.schedule.total_steps(opts.batch_size));
        let outcome = pipeline.run_step(&plan, &examples, &opts)?;
        write_jsonl(&cfg.output_dir.join(format!("log_step{step}.jsonl")), &outcome.log)?;
        let ck = Checkpoint::capture(
            step,
            &config_hash,
            cfg.clip,
            &pipeline,
            OptimizerState::Supervised {
                groups: outcome.optimizer,
            },
            outcome.rng,
        );
        let path = Checkpoint::path_in(&cfg.output_dir, step);
        ck.save(&path)?;
        let means = epoch_means(&outcome.log);
        println!(
            "step {step}: final epoch mean loss {:.4}, checkpoint {}",
            means.last().copied().unwrap_or(f64::NAN),
            path.display()
        );
        paths.push(path);
    }
    Ok(paths)
}

fn parse_split(s: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown split `{s}`")))
}

/// Evaluates a checkpoint; writes the JSON report and a table next to it.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(PathBuf, MetricsReport)> {
    let cfg = load_config(&args.run)?;
    let ckpt_path = match &args.checkpoint {
        Some(p) => p.clone(),
        None => (2..=4)
            .rev()
            .map(|s| Checkpoint::path_in(&cfg.output_dir, s))
            .find(|p| p.is_file())
            .ok_or_else(|| {
                Error::Prerequisite(format!("no step checkpoint in {}", cfg.output_dir.display()))
            })?,
    };
    if !ckpt_path.is_file() {
        return Err(Error::Prerequisite(format!("checkpoint {} not found", ckpt_path.display())));
    }
    let ck = Checkpoint::load(&ckpt_path)?;
    let config_hash = cfg.hash();
    if let Err(e) = ck.check_config(&config_hash) {
        if !args.allow_config_mismatch {
            return Err(e);
        }
        log::warn!("{e}; continuing because --allow-config-mismatch is set");
    }
    if args.with_streams && ck.encoder.is_none() {
        return Err(Error::InvalidArgument(format!(
            "--with-streams given but {} has no stream encoder (video-only checkpoint)",
            ckpt_path.display()
        )));
    }
    let pipeline = ck.restore(&BackboneRegistry::default())?;
    let dataset = Dataset::load(&cfg.manifest)?;
    let opts = EvalOptions {
        split: parse_split(&args.split)?,
        with_streams: args.with_streams,
        include_exception: args.include_class13,
        parallel: !deterministic(),
    };
    let mut report = evaluate_model(&pipeline, &dataset, &ck.clip, &opts)?;
    report.metadata.checkpoint_hash = Some(ck.hash());
    report.metadata.config_hash = Some(config_hash);

    let mut tag = format!("step{}_{}", ck.step, opts.split.name());
    if args.with_streams {
        tag.push_str("_streams");
    }
    if args.include_class13 {
        tag.push_str("_with13");
    }
    let path = cfg.output_dir.join(format!("metrics_{tag}.json"));
    fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    let table = render_table(&[(&tag, &report)]);
    let tpath = cfg.output_dir.join(format!("metrics_{tag}.txt"));
    fs::write(&tpath, &table).map_err(|e| Error::io(&tpath, e))?;
    print!("{table}");
    println!("report: {}", path.display());
    Ok((path, report))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<PathBuf> {
    let mut spec = match &args.config {
        Some(p) => RunConfig::load(p)?.synth.unwrap_or(SynthSpec::new(LabelSource::Streams)),
        None => SynthSpec::new(LabelSource::Streams),
    };
    if let Some(s) = args.label_source {
        spec.label_source = s;
    }
    if let Some(v) = args.videos {
        spec.n_videos = v;
    }
    if let Some(d) = args.duration {
        spec.duration = d;
    }
    if let Some(c) = args.classes {
        spec.n_classes = c;
    }
    let ds = make_synthetic_dataset(args.seed, &spec)?;
    let path = ds.write(&args.out)?;
    for s in ds.manifest.split_statistics() {
        let total: f64 = s.seconds_per_class.values().sum();
        let freqs: Vec<String> = s
            .seconds_per_class
            .iter()
            .map(|(c, secs)| format!("{c}: {:.3}", secs / total))
            .collect();
        println!("{}: {} videos, class frequencies {{{}}}", s.split.name(), s.videos, freqs.join(", "));
    }
    println!("manifest: {}", path.display());
    Ok(path)
}

pub fn cmd_plot(args: &PlotArgs) -> Result<Vec<PathBuf>> {
    let config = args.config.as_deref().map(RunConfig::load).transpose()?;
    let config_hash = config.as_ref().map(RunConfig::hash);
    let manifest = args.manifest.clone().or_else(|| config.map(|c| c.manifest));
    if manifest.is_none() && args.log.is_none() {
        return Err(Error::InvalidArgument("plot needs --manifest, --config or --log".into()));
    }
    let mut paths = Vec::new();
    if let Some(m) = manifest {
        let manifest = crate::datapipe::load_manifest(&m)?;
        paths.extend(plot::plot_manifest(&manifest, &args.out, config_hash.as_deref())?);
    }
    if let Some(l) = &args.log {
        paths.extend(plot::plot_log(&plot::read_log(l)?, &args.out, config_hash.as_deref())?);
    }
    for p in &paths {
        println!("{}", p.display());
    }
    Ok(paths)
}
