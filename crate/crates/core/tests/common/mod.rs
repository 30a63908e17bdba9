//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fusionbench::autodiff::{Graph, Mat};
use fusionbench::config::RunConfig;
use fusionbench::datapipe::{make_synthetic_dataset, LabelSource, SynthSpec};
use fusionbench::decoder::{AttentiveClassifier, DecoderConfig};
use fusionbench::evaluation::PredictionTrack;
use fusionbench::nn::Mode;
use fusionbench::params::ParamSet;
use fusionbench::recipe::combined_loss_graph;
use fusionbench::stream_encoder::{fusion_layer_graph, init_fusion_params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn randn(rng: &mut ChaCha8Rng, shape: (usize, usize), std: f64) -> Mat {
    Mat::from_shape_fn(shape, |_| std * rng.sample::<f64, _>(StandardNormal))
}

/// Central differences of `f` with respect to every scalar in `params`.
pub fn numeric_grads(params: &ParamSet, h: f64, f: &dyn Fn(&ParamSet) -> f64) -> ParamSet {
    let mut out = ParamSet::new();
    let mut work = params.clone();
    for (name, value) in params.iter() {
        let mut grad = Mat::zeros(value.dim());
        for idx in ndarray::indices(value.dim()) {
            let x0 = value[idx];
            work.get_mut(name).unwrap()[idx] = x0 + h;
            let up = f(&work);
            work.get_mut(name).unwrap()[idx] = x0 - h;
            let down = f(&work);
            work.get_mut(name).unwrap()[idx] = x0;
            grad[idx] = (up - down) / (2.0 * h);
        }
        out.insert(name.clone(), grad);
    }
    out
}

/// Denominator floor: gradients the loss is invariant to (key biases under
/// softmax) are zero analytically and rounding noise numerically.
pub const GRAD_FLOOR: f64 = 1e-5;

/// `‖a − n‖ / max(‖a‖, ‖n‖, GRAD_FLOOR)` per array.
pub fn relative_errors(analytic: &ParamSet, numeric: &ParamSet) -> BTreeMap<String, f64> {
    analytic
        .iter()
        .map(|(name, a)| {
            let n = numeric.get(name).unwrap();
            let diff = (a - n).mapv(|v| v * v).sum().sqrt();
            let scale = a.mapv(|v| v * v).sum().sqrt().max(n.mapv(|v| v * v).sum().sqrt());
            (name.clone(), diff / scale.max(GRAD_FLOOR))
        })
        .collect()
}

/// Analytic gradient of a scalar graph function over every entry of `params`.
pub fn analytic_grads(params: &ParamSet, build: &dyn Fn(&mut Graph, &fusionbench::params::Bound) -> fusionbench::autodiff::Var) -> (f64, ParamSet) {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let loss = build(&mut g, &bound);
    let grads = g.backward(loss);
    (g.scalar(loss), bound.gradients(&grads, params))
}

fn value_of(params: &ParamSet, build: &dyn Fn(&mut Graph, &fusionbench::params::Bound) -> fusionbench::autodiff::Var) -> f64 {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let loss = build(&mut g, &bound);
    g.scalar(loss)
}

/// Runs the check and returns the worst per-array relative error.
pub fn gradcheck(params: &ParamSet, build: &dyn Fn(&mut Graph, &fusionbench::params::Bound) -> fusionbench::autodiff::Var) -> (f64, BTreeMap<String, f64>) {
    let (_, analytic) = analytic_grads(params, build);
    let numeric = numeric_grads(params, 1e-5, &|p| value_of(p, build));
    let errs = relative_errors(&analytic, &numeric);
    let worst = errs.values().copied().fold(0.0, f64::max);
    (worst, errs)
}

fn perturb(set: &mut ParamSet, rng: &mut ChaCha8Rng, std: f64) {
    for (_, v) in set.iter_mut() {
        v.mapv_inplace(|x| x + std * rng.sample::<f64, _>(StandardNormal));
    }
}

/// One fusion layer at d = 8: gradients with respect to the state, the
/// stream tokens and every layer parameter, projected on a fixed direction.
pub fn fusion_layer_case(seed: u64) -> (f64, BTreeMap<String, f64>) {
    let (d, heads, ns, nm) = (8, 2, 4, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_fusion_params(d, heads, 1, seed).unwrap().params;
    perturb(&mut params, &mut rng, 0.3);
    params.insert("input.state", randn(&mut rng, (ns, d), 1.0));
    params.insert("input.tokens", randn(&mut rng, (nm, d), 1.0));
    let direction = randn(&mut rng, (ns, d), 1.0);
    gradcheck(&params, &move |g, p| {
        let s = p.var("input.state").unwrap();
        let t = p.var("input.tokens").unwrap();
        let out = fusion_layer_graph(g, p, 1, heads, t, s, &mut Mode::Eval).unwrap();
        let dot = g.mul_const(out, direction.clone());
        g.sum(dot)
    })
}

/// Attentive classifier at d = 8 followed by cross-entropy.
pub fn classify_case(seed: u64) -> (f64, BTreeMap<String, f64>) {
    let (d, heads, classes, ns) = (8, 2, 3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dec = AttentiveClassifier::new(DecoderConfig::new(d, heads, classes, seed)).unwrap();
    let mut params = dec.params.clone();
    perturb(&mut params, &mut rng, 0.2);
    params.insert("input.state", randn(&mut rng, (ns, d), 1.0));
    let label = rng.gen_range(0..classes);
    let dec = AttentiveClassifier { params: ParamSet::new(), ..dec };
    gradcheck(&params, &move |g, p| {
        let s = p.var("input.state").unwrap();
        let logits = dec.forward_graph(g, p, s).unwrap();
        g.cross_entropy(logits, label)
    })
}

/// Cross-entropy plus the state-change penalty, with respect to logits and
/// both states.
pub fn combined_loss_case(seed: u64) -> (f64, BTreeMap<String, f64>) {
    let (d, ns, classes) = (8, 4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    params.insert("logits", randn(&mut rng, (1, classes), 1.0));
    params.insert("s_out", randn(&mut rng, (ns, d), 1.0));
    params.insert("s_in", randn(&mut rng, (ns, d), 1.0));
    let label = rng.gen_range(0..classes);
    let lambda = 0.37;
    gradcheck(&params, &move |g, p| {
        let (_, _, total) = combined_loss_graph(
            g,
            p.var("logits").unwrap(),
            label,
            p.var("s_out").unwrap(),
            p.var("s_in").unwrap(),
            lambda,
        )
        .unwrap();
        total
    })
}

/// Brute-force metric oracle: confusion counts per (video, class), IoU from
/// the counts, then mean / median / type-7 quantile over sorted values.
pub struct OracleMetrics {
    pub per_video: Vec<Vec<Option<f64>>>,
    pub accuracy: f64,
    pub pooled: Vec<f64>,
}

pub fn oracle_metrics(tracks: &[PredictionTrack]) -> OracleMetrics {
    let mut per_video = Vec::new();
    let (mut hit, mut total) = (0usize, 0usize);
    for t in tracks {
        let k = t.num_classes;
        let mut confusion = vec![vec![0usize; k]; k];
        for e in &t.entries {
            confusion[e.predicted][e.truth] += 1;
            total += 1;
            hit += usize::from(e.predicted == e.truth);
        }
        let ious = (0..k)
            .map(|c| {
                let tp = confusion[c][c];
                let row: usize = confusion[c].iter().sum();
                let col: usize = confusion.iter().map(|r| r[c]).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect::<Vec<_>>();
        per_video.push(ious);
    }
    let pooled = per_video.iter().flatten().flatten().copied().collect();
    OracleMetrics {
        per_video,
        accuracy: hit as f64 / total as f64,
        pooled,
    }
}

/// Mean, median and 1/6 quantile by sorting, with linear interpolation at
/// position `q·(n−1)`.
pub fn oracle_aggregate(values: &[f64]) -> (f64, f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    let at = |q: f64| {
        let pos = q * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    };
    let mean = v.iter().sum::<f64>() / n as f64;
    (mean, at(0.5), at(1.0 / 6.0))
}

pub fn random_track(rng: &mut ChaCha8Rng, id: &str, num_classes: usize, len: usize) -> PredictionTrack {
    let predicted: Vec<usize> = (0..len).map(|_| rng.gen_range(0..num_classes)).collect();
    let truth: Vec<usize> = (0..len).map(|_| rng.gen_range(0..num_classes)).collect();
    PredictionTrack::from_labels(id, num_classes, &predicted, &truth).unwrap()
}

/// Synthetic dataset sized for the end-to-end checks: 56 one-minute videos
/// with short label segments, 28 of them held out for testing.
pub fn toy_synth_spec(source: LabelSource) -> SynthSpec {
    SynthSpec {
        n_videos: 56,
        segment_min: 4.0,
        segment_max: 8.0,
        val_fraction: 0.1,
        test_fraction: 0.5,
        ..SynthSpec::new(source)
    }
}

pub struct ToyRun {
    pub config_path: PathBuf,
    pub config: RunConfig,
}

/// Writes a synthetic dataset and a run config with toy-scale schedules
/// under `dir`.
pub fn write_toy_run(dir: &Path, spec: &SynthSpec, seed: u64, epochs: usize) -> ToyRun {
    let ds = make_synthetic_dataset(seed, spec).unwrap();
    let manifest = ds.write(&dir.join("data")).unwrap();
    let value = serde_json::json!({
        "manifest": manifest.strip_prefix(dir).unwrap(),
        "output_dir": "run",
        "seed": seed,
        "clip": {"frames": 8, "interval": 1.0},
        "backbone": {"stub": {
            "tubelet": {"temporal_width": 2, "spatial_size": 4, "embed_dim": 32},
            "channels": 3, "depth": 1, "heads": 4, "mlp_ratio": 2, "predictor_hidden": 32, "seed": seed
        }},
        "finetune": {
            "pretrain_schedule": {"preset": "steps34", "epochs": 2, "samples_per_epoch": 32, "lr_start": 0.01, "lr_max": 0.1},
            "batch_size": 4
        },
        "steps": {
            "step2": {"preset": "heico-step2", "epochs": epochs, "samples_per_epoch": 256, "lr_start": 1e-3, "lr_max": 3e-3},
            "step3": {"preset": "steps34", "epochs": epochs, "samples_per_epoch": 256, "lr_start": 1e-4, "lr_max": 3e-3},
            "step4": {"preset": "steps34", "epochs": epochs.div_ceil(2), "samples_per_epoch": 256, "lr_start": 1e-4, "lr_max": 1e-3}
        },
        "train": {"batch_size": 8, "prefetch": true, "optimizer": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8}}
    });
    let config_path = dir.join("config.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    let config = RunConfig::load(&config_path).unwrap();
    ToyRun { config_path, config }
}
