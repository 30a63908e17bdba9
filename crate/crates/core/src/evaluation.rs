//! Segmentation-style metrics over densely sampled clip predictions.
//!
//! Per-video per-class IoU values are pooled across a split and summarized
//! by their mean (aIoU), median (mIoU) and 1/6 quantile (qIoU); accuracy is
//! pooled over every anchor of every video.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::datapipe::{ClipSpec, Dataset, Split};
use crate::error::{Error, Result};
use crate::recipe::Pipeline;

/// Quantile convention recorded in every report.
pub const QUANTILE_CONVENTION: &str =
    "linear interpolation between order statistics: h = (n-1)q, x[floor h] + (h - floor h)(x[floor h + 1] - x[floor h])";
/// Aggregation population recorded in every report.
pub const AGGREGATION_CONVENTION: &str = "per-video per-class IoU values pooled across the split; empty unions skipped";
pub const QIOU_QUANTILE: f64 = 1.0 / 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub anchor_time: f64,
    pub predicted: usize,
    pub truth: usize,
}

/// Predictions of one video, anchors strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTrack {
    pub video_id: String,
    pub num_classes: usize,
    pub entries: Vec<TrackEntry>,
}

impl PredictionTrack {
    pub fn new(video_id: impl Into<String>, num_classes: usize, entries: Vec<TrackEntry>) -> Result<Self> {
        let t = Self {
            video_id: video_id.into(),
            num_classes,
            entries,
        };
        t.validate()?;
        Ok(t)
    }

    /// Anchors at `0, 1, 2, …` seconds.
    pub fn from_labels(video_id: impl Into<String>, num_classes: usize, predicted: &[usize], truth: &[usize]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::Shape(format!("{} predictions for {} labels", predicted.len(), truth.len())));
        }
        let entries = predicted
            .iter()
            .zip(truth)
            .enumerate()
            .map(|(i, (&p, &t))| TrackEntry {
                anchor_time: i as f64,
                predicted: p,
                truth: t,
            })
            .collect();
        Self::new(video_id, num_classes, entries)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.windows(2).any(|w| !(w[1].anchor_time > w[0].anchor_time)) {
            return Err(Error::InvalidArgument(format!(
                "anchors of `{}` are not strictly increasing",
                self.video_id
            )));
        }
        if let Some(e) = self
            .entries
            .iter()
            .find(|e| e.predicted >= self.num_classes || e.truth >= self.num_classes)
        {
            return Err(Error::InvalidArgument(format!(
                "class out of range for {} classes in `{}`: {e:?}",
                self.num_classes, self.video_id
            )));
        }
        Ok(())
    }
}

/// `|pred = c ∧ gt = c| / |pred = c ∨ gt = c|`, `None` for an empty union.
pub fn per_class_iou(track: &PredictionTrack, class: usize) -> Result<Option<f64>> {
    if track.entries.is_empty() {
        return Err(Error::Empty(format!("track `{}` is empty", track.video_id)));
    }
    if class >= track.num_classes {
        return Err(Error::InvalidArgument(format!(
            "class {class} out of range for {} classes",
            track.num_classes
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for e in &track.entries {
        let p = e.predicted == class;
        let t = e.truth == class;
        inter += usize::from(p && t);
        union += usize::from(p || t);
    }
    Ok((union > 0).then(|| inter as f64 / union as f64))
}

/// Fraction of anchors with `pred == gt`, pooled over all tracks.
pub fn accuracy(tracks: &[PredictionTrack]) -> Result<f64> {
    let total: usize = tracks.iter().map(|t| t.entries.len()).sum();
    if total == 0 {
        return Err(Error::Empty("accuracy of an empty track".into()));
    }
    let hits: usize = tracks
        .iter()
        .flat_map(|t| &t.entries)
        .filter(|e| e.predicted == e.truth)
        .count();
    Ok(hits as f64 / total as f64)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile of an empty list".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("quantile {q} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub aiou: f64,
    pub miou: f64,
    pub qiou: f64,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::Empty("cannot aggregate an empty IoU list".into()));
    }
    Ok(Aggregate {
        aiou: values.iter().sum::<f64>() / values.len() as f64,
        miou: quantile(values, 0.5)?,
        qiou: quantile(values, QIOU_QUANTILE)?,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub quantile_convention: String,
    pub aggregation: String,
    pub checkpoint_hash: Option<String>,
    pub config_hash: Option<String>,
    pub with_streams: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// IoU per video id and class; classes with an empty union are absent.
    pub per_video: BTreeMap<String, BTreeMap<usize, f64>>,
    pub aiou: f64,
    pub miou: f64,
    pub qiou: f64,
    pub accuracy: f64,
    pub anchors: usize,
    pub exception_class: Option<usize>,
    pub exception_included: bool,
    pub metadata: ReportMetadata,
}

/// Builds a report from tracks. With `include_exception` off, the exception
/// class is dropped from the IoU population and its ground-truth anchors
/// from accuracy; other classes' IoU values are unaffected.
pub fn compute_report(
    tracks: &[PredictionTrack],
    exception_class: Option<usize>,
    include_exception: bool,
) -> Result<MetricsReport> {
    if tracks.is_empty() {
        return Err(Error::Empty("no prediction tracks".into()));
    }
    let excluded = if include_exception { None } else { exception_class };
    let mut per_video = BTreeMap::new();
    let mut pooled = Vec::new();
    for t in tracks {
        t.validate()?;
        let mut row = BTreeMap::new();
        for c in (0..t.num_classes).filter(|&c| Some(c) != excluded) {
            if let Some(v) = per_class_iou(t, c)? {
                row.insert(c, v);
                pooled.push(v);
            }
        }
        if per_video.insert(t.video_id.clone(), row).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate track for `{}`", t.video_id)));
        }
    }
    let kept: Vec<PredictionTrack> = tracks
        .iter()
        .map(|t| PredictionTrack {
            entries: t.entries.iter().copied().filter(|e| Some(e.truth) != excluded).collect(),
            ..t.clone()
        })
        .collect();
    let agg = aggregate(&pooled)?;
    Ok(MetricsReport {
        per_video,
        aiou: agg.aiou,
        miou: agg.miou,
        qiou: agg.qiou,
        accuracy: accuracy(&kept)?,
        anchors: kept.iter().map(|t| t.entries.len()).sum(),
        exception_class,
        exception_included: exception_class.is_some() && include_exception,
        metadata: ReportMetadata {
            quantile_convention: QUANTILE_CONVENTION.to_string(),
            aggregation: AGGREGATION_CONVENTION.to_string(),
            ..Default::default()
        },
    })
}

/// Predicts every non-skipped anchor of every video in `split`.
///
/// Videos are processed concurrently; tracks are returned in video id order.
pub fn predict_split(
    pipeline: &Pipeline,
    dataset: &Dataset,
    clip: &ClipSpec,
    opts: &EvalOptions,
) -> Result<Vec<PredictionTrack>> {
    let (split, with_streams) = (opts.split, opts.with_streams);
    let mut ids: Vec<&String> = dataset.manifest.splits.get(split).iter().collect();
    if ids.is_empty() {
        return Err(Error::Empty(format!("split `{}` is empty", split.name())));
    }
    ids.sort();
    let num_classes = dataset.manifest.task.num_classes();
    let workers = if opts.parallel {
        thread::available_parallelism().map_or(1, |n| n.get()).min(ids.len())
    } else {
        1
    };
    let chunk = ids.len().div_ceil(workers);
    let results: Vec<Result<Vec<PredictionTrack>>> = thread::scope(|scope| {
        let handles: Vec<_> = ids
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|id| {
                            let mut entries = Vec::new();
                            for a in dataset.anchors(id, clip)? {
                                let sample = dataset.clip_at(id, a, clip)?;
                                entries.push(TrackEntry {
                                    anchor_time: a,
                                    predicted: pipeline.predict(&sample, with_streams)?,
                                    truth: sample.label,
                                });
                            }
                            PredictionTrack::new(id.as_str(), num_classes, entries)
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub split: Split,
    pub with_streams: bool,
    pub include_exception: bool,
    /// Evaluate videos on worker threads; results are identical either way.
    pub parallel: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            split: Split::Test,
            with_streams: false,
            include_exception: false,
            parallel: true,
        }
    }
}

/// End-to-end evaluation of a pipeline on one split.
pub fn evaluate_model(pipeline: &Pipeline, dataset: &Dataset, clip: &ClipSpec, opts: &EvalOptions) -> Result<MetricsReport> {
    if let Some(d) = &pipeline.decoder {
        let e = pipeline.backbone.embed_dim();
        if d.config.embed_dim != e {
            return Err(Error::Shape(format!("decoder width {} vs backbone width {e}", d.config.embed_dim)));
        }
        if d.config.num_classes != dataset.manifest.task.num_classes() {
            return Err(Error::Shape(format!(
                "decoder has {} classes, task has {}",
                d.config.num_classes,
                dataset.manifest.task.num_classes()
            )));
        }
    }
    let tracks = predict_split(pipeline, dataset, clip, opts)?;
    let mut report = compute_report(&tracks, dataset.manifest.task.exception_class(), opts.include_exception)?;
    report.metadata.with_streams = opts.with_streams;
    Ok(report)
}

/// Plain-text table, one row per report, values in percent.
pub fn render_table(rows: &[(&str, &MetricsReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>5}  {:>5}  {:>5}  {:>5}", "model", "aIoU", "mIoU", "qIoU", "Acc");
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>5.1}  {:>5.1}  {:>5.1}  {:>5.1}",
            name,
            100.0 * r.aiou,
            100.0 * r.miou,
            100.0 * r.qiou,
            100.0 * r.accuracy
        );
    }
    s
}
