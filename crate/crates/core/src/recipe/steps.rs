//! Step plans, the frozen/fluid/hot state machine, and the supervised loops
//! for steps 2 to 4.
//!
//! | step | backbone | stream encoder | decoder | loss            |
//! |------|----------|----------------|---------|-----------------|
//! | 2    | frozen   | (unused)       | hot     | CE              |
//! | 3    | frozen   | hot            | fluid   | CE + λ·penalty  |
//! | 4    | frozen   | frozen         | hot     | CE + λ·penalty  |
//!
//! Frozen components are precomputed once per example: the backbone
//! embedding always, and in step 4 the encoder output (eval mode).

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{combined_loss_graph, DEFAULT_LAMBDA};
use super::sampler::{batch_feed, BalancedSampler};
use super::schedule::{lr_at, wd_at, ScheduleSpec};
use crate::autodiff::{Graph, Mat, Var};
use crate::backbone::VideoBackbone;
use crate::datapipe::ClipSample;
use crate::decoder::AttentiveClassifier;
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::optim::{AdamW, AdamWConfig};
use crate::params::ParamSet;
use crate::stream_encoder::{stream_windows, StreamEncoder, StreamTokenizerSpec};
use crate::tokens::StateVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentState {
    /// No gradient flow, no update.
    Frozen,
    /// Gradients flow through, weights stay fixed.
    Fluid,
    /// Updated by the optimizer.
    Hot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossComposition {
    CrossEntropy,
    WithStateChange { lambda: f64 },
}

impl LossComposition {
    pub fn lambda(&self) -> f64 {
        match self {
            LossComposition::CrossEntropy => 0.0,
            LossComposition::WithStateChange { lambda } => *lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    pub step: u8,
    pub backbone: ComponentState,
    pub encoder: Option<ComponentState>,
    pub decoder: ComponentState,
    pub loss: LossComposition,
    pub schedule: ScheduleSpec,
}

impl StepPlan {
    /// Supervised plan for step 2, 3 or 4 (step 1 is the JEPA loop).
    pub fn for_step(step: u8, schedule: ScheduleSpec, lambda: f64) -> Result<Self> {
        use ComponentState::*;
        schedule.validate()?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("λ must be finite and ≥ 0, got {lambda}")));
        }
        let (encoder, decoder, loss) = match step {
            2 => (None, Hot, LossComposition::CrossEntropy),
            3 => (Some(Hot), Fluid, LossComposition::WithStateChange { lambda }),
            4 => (Some(Frozen), Hot, LossComposition::WithStateChange { lambda }),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "supervised steps are 2, 3 and 4, got {other}"
                )))
            }
        };
        Ok(Self {
            step,
            backbone: Frozen,
            encoder,
            decoder,
            loss,
            schedule,
        })
    }

    pub fn default_for_step(step: u8) -> Result<Self> {
        let schedule = if step == 2 {
            ScheduleSpec::heico_step2()
        } else {
            ScheduleSpec::steps34()
        };
        Self::for_step(step, schedule, DEFAULT_LAMBDA)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    /// Prepare batches on a producer thread.
    pub prefetch: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: 4,
            seed: 0,
            optimizer: AdamWConfig::default(),
            prefetch: true,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step_id: u8,
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub task_loss: f64,
    pub penalty: f64,
    pub lr: f64,
    pub wd: f64,
}

/// A training example with its frozen backbone embedding precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    /// Backbone state `s_in`.
    pub state: Mat,
    /// Per-channel stream windows, if the sample carries streams.
    pub windows: Option<Vec<Mat>>,
    pub label: usize,
}

/// Embeds every clip with the (frozen) backbone and cuts stream windows.
pub fn prepare_examples(
    backbone: &dyn VideoBackbone,
    clips: &[ClipSample],
    tokenizer: Option<&StreamTokenizerSpec>,
) -> Result<Vec<TrainingExample>> {
    clips
        .iter()
        .map(|c| {
            let state = backbone.encode(&c.clip)?.tokens;
            let windows = match (tokenizer, &c.streams) {
                (Some(spec), Some(s)) => Some(stream_windows(s, spec)?),
                (Some(_), None) => {
                    return Err(Error::InvalidArgument(format!(
                        "clip of `{}` at {} s has no streams",
                        c.video_id, c.anchor_time
                    )))
                }
                (None, _) => None,
            };
            Ok(TrainingExample {
                state,
                windows,
                label: c.label,
            })
        })
        .collect()
}

/// Content hashes of each component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentDigests {
    pub backbone: String,
    pub encoder: Option<String>,
    pub decoder: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub step: u8,
    pub log: Vec<LogRecord>,
    pub before: ComponentDigests,
    pub after: ComponentDigests,
    /// Optimizer state per hot parameter group.
    pub optimizer: BTreeMap<String, AdamW>,
    /// Dropout RNG after the last update.
    pub rng: ChaCha8Rng,
}

/// Backbone, optional stream encoder and decoder, plus completed steps.
pub struct Pipeline {
    pub backbone: Box<dyn VideoBackbone>,
    pub encoder: Option<StreamEncoder>,
    pub decoder: Option<AttentiveClassifier>,
    pub completed: Vec<u8>,
}

impl Pipeline {
    pub fn new(backbone: Box<dyn VideoBackbone>) -> Self {
        Self {
            backbone,
            encoder: None,
            decoder: None,
            completed: Vec::new(),
        }
    }

    pub fn digests(&self) -> ComponentDigests {
        ComponentDigests {
            backbone: self.backbone.digest(),
            encoder: self.encoder.as_ref().map(StreamEncoder::digest),
            decoder: self.decoder.as_ref().map(AttentiveClassifier::digest),
        }
    }

    fn check_prerequisites(&self, step: u8) -> Result<()> {
        let missing = |what: &str| Err(Error::Prerequisite(what.to_string()));
        match step {
            2 if self.decoder.is_none() => missing("step 2 needs an initialized decoder"),
            3 if self.decoder.is_none() || !self.completed.contains(&2) => {
                missing("step 3 needs the step-2 decoder")
            }
            3 if self.encoder.is_none() => missing("step 3 needs an initialized stream encoder"),
            4 if self.encoder.is_none() || !self.completed.contains(&3) => {
                missing("step 4 needs the step-3 stream encoder")
            }
            _ => Ok(()),
        }
    }

    /// Runs one supervised step and verifies the state machine afterwards.
    pub fn run_step(&mut self, plan: &StepPlan, train: &[TrainingExample], opts: &TrainOptions) -> Result<StepOutcome> {
        self.check_prerequisites(plan.step)?;
        if train.is_empty() {
            return Err(Error::Empty(format!("no training examples for step {}", plan.step)));
        }
        let before = self.digests();
        let seed = opts.seed.wrapping_add(plan.step as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x000d_2090_u64);
        let lambda = plan.loss.lambda();
        let decoder = self.decoder.as_mut().expect("checked");

        let (log, optimizer) = match plan.step {
            2 => {
                let mut opt = AdamW::new(opts.optimizer);
                let log = supervised_loop(plan, opts, train, |batch, lr, wd| {
                    let mut g = Graph::new();
                    let dp = decoder.params.bind(&mut g);
                    let mut terms = Vec::new();
                    for ex in batch {
                        let s = g.leaf(ex.state.clone());
                        let logits = decoder.forward_graph(&mut g, &dp, s)?;
                        terms.push(combined_loss_graph(&mut g, logits, ex.label, s, s, lambda)?);
                    }
                    let parts = mean_terms(&mut g, &terms);
                    let grads = g.backward(parts.2);
                    let gd = dp.gradients(&grads, &decoder.params);
                    opt.step(&mut decoder.params, &gd, lr, wd)?;
                    Ok(values(&g, parts))
                })?;
                (log, BTreeMap::from([("decoder".to_string(), opt)]))
            }
            3 => {
                let encoder = self.encoder.as_mut().expect("checked");
                let mut opt_tok = AdamW::new(opts.optimizer);
                let mut opt_fus = AdamW::new(opts.optimizer);
                let log = supervised_loop(plan, opts, train, |batch, lr, wd| {
                    let mut g = Graph::new();
                    let tp = encoder.tokenizer.bind(&mut g);
                    let fp = encoder.fusion.params.bind(&mut g);
                    let dp = decoder.params.bind(&mut g);
                    let mut mode = Mode::Train {
                        dropout: encoder.fusion.dropout,
                        rng: &mut rng,
                    };
                    let mut terms = Vec::new();
                    for ex in batch {
                        let windows = ex.windows.as_ref().ok_or_else(|| {
                            Error::InvalidArgument("step 3 needs examples with streams".into())
                        })?;
                        let s_in = g.leaf(ex.state.clone());
                        let s_out = encoder.forward_graph(&mut g, &tp, &fp, windows, s_in, &mut mode)?;
                        let logits = decoder.forward_graph(&mut g, &dp, s_out)?;
                        terms.push(combined_loss_graph(&mut g, logits, ex.label, s_out, s_in, lambda)?);
                    }
                    let parts = mean_terms(&mut g, &terms);
                    let grads = g.backward(parts.2);
                    let gt = tp.gradients(&grads, &encoder.tokenizer);
                    let gf = fp.gradients(&grads, &encoder.fusion.params);
                    opt_tok.step(&mut encoder.tokenizer, &gt, lr, wd)?;
                    opt_fus.step(&mut encoder.fusion.params, &gf, lr, wd)?;
                    Ok(values(&g, parts))
                })?;
                let opt = BTreeMap::from([("encoder.tokenizer".to_string(), opt_tok), ("encoder.fusion".to_string(), opt_fus)]);
                (log, opt)
            }
            4 => {
                let encoder = self.encoder.as_ref().expect("checked");
                let encoded = encode_examples(encoder, train)?;
                let mut opt = AdamW::new(opts.optimizer);
                let log = supervised_loop(plan, opts, &encoded, |batch, lr, wd| {
                    let mut g = Graph::new();
                    let dp = decoder.params.bind(&mut g);
                    let mut terms = Vec::new();
                    for ex in batch {
                        let s_out = g.leaf(ex.0.clone());
                        let s_in = g.leaf(ex.1.state.clone());
                        let logits = decoder.forward_graph(&mut g, &dp, s_out)?;
                        terms.push(combined_loss_graph(&mut g, logits, ex.1.label, s_out, s_in, lambda)?);
                    }
                    let parts = mean_terms(&mut g, &terms);
                    let grads = g.backward(parts.2);
                    let gd = dp.gradients(&grads, &decoder.params);
                    opt.step(&mut decoder.params, &gd, lr, wd)?;
                    Ok(values(&g, parts))
                })?;
                (log, BTreeMap::from([("decoder".to_string(), opt)]))
            }
            other => return Err(Error::InvalidArgument(format!("unknown step {other}"))),
        };

        let after = self.digests();
        verify_state_machine(plan, &before, &after)?;
        self.completed.retain(|&s| s < plan.step);
        self.completed.push(plan.step);
        Ok(StepOutcome {
            step: plan.step,
            log,
            before,
            after,
            optimizer,
            rng,
        })
    }

    /// Decoder input for one clip: backbone state, fused with streams when
    /// `with_streams` is set.
    pub fn state_for(&self, clip: &ClipSample, with_streams: bool) -> Result<StateVector> {
        let s = self.backbone.encode(&clip.clip)?;
        if !with_streams {
            return Ok(s);
        }
        let encoder = self
            .encoder
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("streams requested but no stream encoder is loaded".into()))?;
        let streams = clip
            .streams
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("clip of `{}` has no streams", clip.video_id)))?;
        encoder.encode(streams, &s)
    }

    pub fn predict(&self, clip: &ClipSample, with_streams: bool) -> Result<usize> {
        let decoder = self
            .decoder
            .as_ref()
            .ok_or_else(|| Error::Prerequisite("no decoder loaded".into()))?;
        Ok(decoder.classify(&self.state_for(clip, with_streams)?)?.argmax())
    }
}

/// `(s_L, example)` pairs with the frozen encoder applied in eval mode.
fn encode_examples<'a>(encoder: &StreamEncoder, train: &'a [TrainingExample]) -> Result<Vec<(Mat, &'a TrainingExample)>> {
    train
        .iter()
        .map(|ex| {
            let windows = ex
                .windows
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("step 4 needs examples with streams".into()))?;
            let mut g = Graph::new();
            let tp = encoder.tokenizer.bind(&mut g);
            let fp = encoder.fusion.params.bind(&mut g);
            let s = g.leaf(ex.state.clone());
            let out = encoder.forward_graph(&mut g, &tp, &fp, windows, s, &mut Mode::Eval)?;
            Ok((g.value(out).clone(), ex))
        })
        .collect()
}

trait Labelled {
    fn label(&self) -> usize;
}

impl Labelled for TrainingExample {
    fn label(&self) -> usize {
        self.label
    }
}

impl Labelled for (Mat, &TrainingExample) {
    fn label(&self) -> usize {
        self.1.label
    }
}

fn mean_terms(g: &mut Graph, terms: &[(Var, Var, Var)]) -> (Var, Var, Var) {
    let mut avg = |pick: fn(&(Var, Var, Var)) -> Var| {
        let parts: Vec<Var> = terms.iter().map(pick).collect();
        let stacked = g.concat_rows(&parts);
        g.mean(stacked)
    };
    (avg(|t| t.0), avg(|t| t.1), avg(|t| t.2))
}

fn values(g: &Graph, (task, penalty, total): (Var, Var, Var)) -> (f64, f64, f64) {
    (g.scalar(task), g.scalar(penalty), g.scalar(total))
}

/// Drives `update` over the scheduled number of class-balanced batches.
fn supervised_loop<E: Labelled + Sync>(
    plan: &StepPlan,
    opts: &TrainOptions,
    examples: &[E],
    mut update: impl FnMut(&[&E], f64, f64) -> Result<(f64, f64, f64)>,
) -> Result<Vec<LogRecord>> {
    let labels: Vec<usize> = examples.iter().map(Labelled::label).collect();
    let sampler = BalancedSampler::new(&labels)?;
    let spec = &plan.schedule;
    let total = spec.total_steps(opts.batch_size);
    let per_epoch = spec.steps_per_epoch(opts.batch_size);
    let feed = batch_feed(sampler, total, opts.batch_size, opts.seed.wrapping_add(plan.step as u64), opts.prefetch);
    let mut log = Vec::with_capacity(total);
    for (step, idx) in feed.enumerate() {
        let lr = lr_at(step, total, spec)?;
        let wd = wd_at(step, total, spec)?;
        let batch: Vec<&E> = idx.iter().map(|&i| &examples[i]).collect();
        let (task_loss, penalty, loss) = update(&batch, lr, wd)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("non-finite loss {loss} in step {}", plan.step),
            });
        }
        log.push(LogRecord {
            step_id: plan.step,
            step,
            epoch: step / per_epoch,
            loss,
            task_loss,
            penalty,
            lr,
            wd,
        });
    }
    Ok(log)
}

/// Frozen and fluid components must be bit-identical across a step.
pub fn verify_state_machine(plan: &StepPlan, before: &ComponentDigests, after: &ComponentDigests) -> Result<()> {
    let violated = |what: &str| {
        Err(Error::InvalidArgument(format!(
            "step {}: {what} changed although it is not hot",
            plan.step
        )))
    };
    if plan.backbone != ComponentState::Hot && before.backbone != after.backbone {
        return violated("backbone");
    }
    if (plan.encoder != Some(ComponentState::Hot)) && before.encoder != after.encoder {
        return violated("stream encoder");
    }
    if plan.decoder != ComponentState::Hot && before.decoder != after.decoder {
        return violated("decoder");
    }
    for (name, state, b, a) in [
        ("stream encoder", plan.encoder, &before.encoder, &after.encoder),
        ("decoder", Some(plan.decoder), &before.decoder, &after.decoder),
    ] {
        if state == Some(ComponentState::Hot) && b == a {
            log::warn!("step {}: hot {name} did not change", plan.step);
        }
    }
    Ok(())
}

/// Number of scalars the plan updates.
pub fn hot_parameter_count(pipeline: &Pipeline, plan: &StepPlan) -> usize {
    let count = |p: &ParamSet| p.num_scalars();
    let mut n = 0;
    if plan.decoder == ComponentState::Hot {
        n += pipeline.decoder.as_ref().map_or(0, |d| count(&d.params));
    }
    if plan.encoder == Some(ComponentState::Hot) {
        n += pipeline
            .encoder
            .as_ref()
            .map_or(0, |e| count(&e.tokenizer) + count(&e.fusion.params));
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{StubBackbone, StubBackboneConfig, TubeletSpec};
    use crate::datapipe::{make_synthetic_dataset, ClipSpec, LabelSource, Split, SynthSpec};
    use crate::decoder::DecoderConfig;
    use crate::stream_encoder::StreamEncoderConfig;

    fn tiny_schedule() -> ScheduleSpec {
        ScheduleSpec {
            epochs: 2,
            samples_per_epoch: 8,
            lr_start: 1e-3,
            lr_max: 1e-2,
            lr_end: 0.0,
            wd_start: 1e-4,
            wd_end: 1e-4,
            warmup_epochs: 1,
            stretch: 1.0,
        }
    }

    fn setup() -> (Pipeline, Vec<TrainingExample>) {
        let spec = SynthSpec {
            n_videos: 3,
            duration: 8.0,
            ..SynthSpec::new(LabelSource::Both)
        };
        let ds = make_synthetic_dataset(0, &spec).unwrap();
        let clips = ds
            .clips(Split::Train, &ClipSpec { frames: 4, interval: 1.0 })
            .unwrap();
        let backbone = StubBackbone::new(StubBackboneConfig {
            tubelet: TubeletSpec {
                temporal_width: 2,
                spatial_size: 4,
                embed_dim: 8,
            },
            depth: 0,
            ..Default::default()
        })
        .unwrap();
        let mut enc_cfg = StreamEncoderConfig::standard(4, 2, 8, 1);
        enc_cfg.layers = 1;
        enc_cfg.heads = 2;
        let examples = prepare_examples(&backbone, &clips, Some(&enc_cfg.tokenizer)).unwrap();
        let mut p = Pipeline::new(Box::new(backbone));
        p.decoder = Some(AttentiveClassifier::new(DecoderConfig::new(8, 2, 2, 2)).unwrap());
        p.encoder = Some(StreamEncoder::new(enc_cfg).unwrap());
        (p, examples)
    }

    #[test]
    fn plans_follow_the_table() {
        let p = StepPlan::default_for_step(3).unwrap();
        assert_eq!(p.decoder, ComponentState::Fluid);
        assert_eq!(p.encoder, Some(ComponentState::Hot));
        assert_eq!(p.loss.lambda(), 1e-3);
        assert_eq!(StepPlan::default_for_step(2).unwrap().loss, LossComposition::CrossEntropy);
        assert!(StepPlan::default_for_step(1).is_err());
    }

    #[test]
    fn prerequisites_are_enforced() {
        let (mut p, ex) = setup();
        let plan3 = StepPlan::for_step(3, tiny_schedule(), 1e-3).unwrap();
        assert!(matches!(p.run_step(&plan3, &ex, &TrainOptions::default()), Err(Error::Prerequisite(_))));
        let plan4 = StepPlan::for_step(4, tiny_schedule(), 1e-3).unwrap();
        assert!(matches!(p.run_step(&plan4, &ex, &TrainOptions::default()), Err(Error::Prerequisite(_))));
    }

    #[test]
    fn steps_change_only_hot_components() {
        let (mut p, ex) = setup();
        let opts = TrainOptions::default();
        let mut outcomes = Vec::new();
        for step in 2..=4 {
            let plan = StepPlan::for_step(step, tiny_schedule(), 1e-3).unwrap();
            outcomes.push(p.run_step(&plan, &ex, &opts).unwrap());
        }
        let [s2, s3, s4] = &outcomes[..] else { panic!() };
        assert_eq!(s2.before.backbone, s4.after.backbone);
        assert_ne!(s2.before.decoder, s2.after.decoder);
        assert_eq!(s3.before.decoder, s3.after.decoder);
        assert_ne!(s3.before.encoder, s3.after.encoder);
        assert_eq!(s4.before.encoder, s4.after.encoder);
        assert_ne!(s4.before.decoder, s4.after.decoder);
        assert_eq!(s2.log.len(), 4);
        assert_eq!(p.completed, vec![2, 3, 4]);
    }

    #[test]
    fn log_matches_schedule_and_loss_identity() {
        let (mut p, ex) = setup();
        let plan = StepPlan::for_step(2, tiny_schedule(), 1e-3).unwrap();
        let out = p.run_step(&plan, &ex, &TrainOptions::default()).unwrap();
        for r in &out.log {
            assert_eq!(r.lr, lr_at(r.step, 4, &plan.schedule).unwrap());
            assert_eq!(r.wd, wd_at(r.step, 4, &plan.schedule).unwrap());
            assert_eq!(r.penalty, 0.0);
            assert_eq!(r.loss, r.task_loss);
        }
    }

    #[test]
    fn identical_seeds_identical_parameters() {
        let run = |prefetch| {
            let (mut p, ex) = setup();
            let opts = TrainOptions {
                prefetch,
                ..Default::default()
            };
            for step in 2..=3 {
                let plan = StepPlan::for_step(step, tiny_schedule(), 1e-3).unwrap();
                p.run_step(&plan, &ex, &opts).unwrap();
            }
            p.digests()
        };
        assert_eq!(run(true), run(true));
        assert_eq!(run(true), run(false));
    }
}
