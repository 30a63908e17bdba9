//! Synthetic datasets with a controllable label signal.
//!
//! Every video is a sequence of constant-class segments. Two independent
//! segment sequences are drawn per video: the label sequence, and a nuisance
//! sequence from a separate RNG stream. Each modality renders either the label
//! sequence (when it carries the signal) or the nuisance sequence (when it does
//! not), so a modality without the signal is statistically independent of the
//! labels while still looking structurally the same.
//!
//! Video frames are a static per-video texture plus per-frame noise, tinted by
//! the class colour of the rendered sequence. Streams are sampled at their own
//! rate, offset from the frame clock, as a class-dependent mean level plus
//! AR(1) noise.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::Array4;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::manifest::{DatasetManifest, Splits, TaskDescriptor, VideoEntry};
use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::stream_encoder::StreamSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Video,
    Streams,
    Both,
}

impl std::str::FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "video" => Ok(LabelSource::Video),
            "streams" => Ok(LabelSource::Streams),
            "both" => Ok(LabelSource::Both),
            other => Err(Error::InvalidArgument(format!(
                "label source must be video, streams or both, got `{other}`"
            ))),
        }
    }
}

impl LabelSource {
    fn video(self) -> bool {
        matches!(self, LabelSource::Video | LabelSource::Both)
    }

    fn streams(self) -> bool {
        matches!(self, LabelSource::Streams | LabelSource::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_videos: usize,
    /// Seconds per video.
    pub duration: f64,
    pub fps: f64,
    pub height: usize,
    pub width: usize,
    pub n_channels: usize,
    pub label_source: LabelSource,
    pub n_classes: usize,
    /// Segment length range in seconds.
    pub segment_min: f64,
    pub segment_max: f64,
    /// Stream sampling rate in Hz.
    pub stream_rate: f64,
    /// All-blue spans inserted per video.
    pub out_of_body_segments: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl SynthSpec {
    pub fn new(label_source: LabelSource) -> Self {
        Self {
            n_videos: 12,
            duration: 60.0,
            fps: 4.0,
            height: 8,
            width: 8,
            n_channels: 4,
            label_source,
            n_classes: 2,
            segment_min: 10.0,
            segment_max: 20.0,
            stream_rate: 2.0,
            out_of_body_segments: 0,
            val_fraction: 0.2,
            test_fraction: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_videos < 3 {
            return bad(format!("need ≥3 videos for three splits, got {}", self.n_videos));
        }
        if self.n_classes < 2 {
            return bad(format!("need ≥2 classes, got {}", self.n_classes));
        }
        if !(self.fps > 0.0 && self.duration > 0.0 && self.stream_rate > 0.0) {
            return bad("fps, duration and stream rate must be positive".into());
        }
        if (self.duration * self.fps).fract().abs() > 1e-9 {
            return bad(format!("duration·fps = {} is not a whole frame count", self.duration * self.fps));
        }
        if self.height == 0 || self.width == 0 || self.n_channels == 0 {
            return bad("frame size and channel count must be positive".into());
        }
        if !(self.segment_min > 0.0 && self.segment_max >= self.segment_min) {
            return bad("segment range must satisfy 0 < min ≤ max".into());
        }
        let f = self.val_fraction + self.test_fraction;
        if !(self.val_fraction >= 0.0 && self.test_fraction >= 0.0 && f < 1.0) {
            return bad("split fractions must be non-negative and sum below 1".into());
        }
        Ok(())
    }

    fn frame_count(&self) -> usize {
        (self.duration * self.fps).round() as usize
    }
}

/// Frame-wise classes: segments of random length, classes cycled through
/// fresh random permutations so every class gets an equal share of segments.
fn segment_track(frames: usize, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = Vec::new();
    let mut track = Vec::with_capacity(frames);
    while track.len() < frames {
        if order.is_empty() {
            order = (0..spec.n_classes).collect();
            order.shuffle(rng);
        }
        let class = order.pop().unwrap();
        let secs = rng.gen_range(spec.segment_min..=spec.segment_max);
        let len = ((secs * spec.fps).round() as usize).max(1);
        track.extend(std::iter::repeat_n(class, len));
    }
    track.truncate(frames);
    track
}

/// Class tint, kept away from pure blue.
fn class_colour(class: usize, n_classes: usize) -> [f32; 3] {
    let h = class as f32 / n_classes as f32;
    let tau = std::f32::consts::TAU;
    [
        0.5 + 0.3 * (tau * h).cos(),
        0.5 + 0.3 * (tau * (h + 1.0 / 3.0)).cos(),
        0.5 + 0.3 * (tau * (h + 2.0 / 3.0)).cos(),
    ]
}

/// `(n_classes × n_channels)` mean levels; channel 0 is a linear ramp over
/// classes so any two classes are separated.
fn stream_levels(spec: &SynthSpec, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1e7e1);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let k = spec.n_classes;
    Mat::from_shape_fn((k, spec.n_channels), |(class, c)| {
        if c == 0 {
            2.0 * class as f64 / (k - 1) as f64 - 1.0
        } else {
            normal.sample(&mut rng)
        }
    })
}

fn render_frames(track: &[usize], spec: &SynthSpec, blue: &[bool], rng: &mut ChaCha8Rng) -> Array4<f32> {
    let (h, w) = (spec.height, spec.width);
    let texture: Vec<f32> = (0..h * w * 3).map(|_| rng.gen_range(-0.1..0.1)).collect();
    let mut frames = Array4::zeros((track.len(), h, w, 3));
    for (t, &class) in track.iter().enumerate() {
        let tint = class_colour(class, spec.n_classes);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let v = if blue[t] {
                        if c == 2 { 1.0 } else { 0.0 }
                    } else {
                        tint[c] + texture[(y * w + x) * 3 + c] + rng.gen_range(-0.1..0.1)
                    };
                    frames[[t, y, x, c]] = v.clamp(0.0, 1.0);
                }
            }
        }
    }
    frames
}

fn render_streams(track: &[usize], spec: &SynthSpec, levels: &Mat, rng: &mut ChaCha8Rng) -> Result<StreamSeries> {
    let innovation = Normal::new(0.0, 0.2).unwrap();
    let phi = 0.8;
    let dt = 1.0 / spec.stream_rate;
    let offset = 0.5 * dt;
    let count = ((spec.duration + dt - offset) / dt).ceil() as usize;
    let timestamps: Vec<f64> = (0..count).map(|i| offset + i as f64 * dt).collect();
    let mut values = Mat::zeros((count, spec.n_channels));
    let mut noise = vec![0.0; spec.n_channels];
    for (i, &t) in timestamps.iter().enumerate() {
        let frame = ((t * spec.fps).floor() as usize).min(track.len() - 1);
        let class = track[frame];
        for c in 0..spec.n_channels {
            noise[c] = phi * noise[c] + innovation.sample(rng);
            values[[i, c]] = levels[[class, c]] + noise[c];
        }
    }
    StreamSeries::new(
        (0..spec.n_channels).map(|c| format!("channel_{c}")).collect(),
        vec!["a.u.".to_string(); spec.n_channels],
        timestamps,
        values,
    )
}

/// Blue-frame flags for `count` spans of 2 s placed at random.
fn blue_flags(frames: usize, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut flags = vec![false; frames];
    let len = ((2.0 * spec.fps).round() as usize).min(frames);
    for _ in 0..spec.out_of_body_segments {
        let start = rng.gen_range(0..=frames - len);
        flags[start..start + len].iter_mut().for_each(|f| *f = true);
    }
    flags
}

/// Generates a complete in-memory dataset; identical seeds give identical data.
pub fn make_synthetic_dataset(seed: u64, spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let frames_per_video = spec.frame_count();
    let levels = stream_levels(spec, seed);
    let n_test = ((spec.n_videos as f64 * spec.test_fraction).round() as usize).max(1);
    let n_val = ((spec.n_videos as f64 * spec.val_fraction).round() as usize).max(1);
    let n_train = spec.n_videos.saturating_sub(n_test + n_val);
    if n_train == 0 {
        return Err(Error::InvalidArgument("split fractions leave no training videos".into()));
    }

    let mut videos = Vec::new();
    let mut label_tracks = BTreeMap::new();
    let mut frames = BTreeMap::new();
    let mut streams = BTreeMap::new();
    let mut splits = Splits::default();
    for i in 0..spec.n_videos {
        let id = format!("video_{i:03}");
        // Separate streams for labels, nuisance, video pixels and stream noise.
        let sub = |k: u64| ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(4 * i as u64 + k));
        let labels = segment_track(frames_per_video, spec, &mut sub(0));
        let nuisance = segment_track(frames_per_video, spec, &mut sub(1));
        let mut pixel_rng = sub(2);
        let blue = blue_flags(frames_per_video, spec, &mut pixel_rng);
        let video_track = if spec.label_source.video() { &labels } else { &nuisance };
        let stream_track = if spec.label_source.streams() { &labels } else { &nuisance };
        frames.insert(id.clone(), render_frames(video_track, spec, &blue, &mut pixel_rng));
        streams.insert(id.clone(), render_streams(stream_track, spec, &levels, &mut sub(3))?);
        videos.push(VideoEntry {
            id: id.clone(),
            frames: PathBuf::from(format!("frames/{id}.fbr")),
            fps: spec.fps,
            frame_count: frames_per_video,
            duration: spec.duration,
            labels: PathBuf::from(format!("labels/{id}.csv")),
            streams: Some(PathBuf::from(format!("streams/{id}.csv"))),
        });
        label_tracks.insert(id.clone(), labels);
        if i < n_train {
            splits.train.push(id);
        } else if i < n_train + n_val {
            splits.val.push(id);
        } else {
            splits.test.push(id);
        }
    }
    let manifest = DatasetManifest {
        name: format!("synthetic-{seed}"),
        task: TaskDescriptor::Synthetic {
            num_classes: spec.n_classes,
        },
        videos,
        splits,
        label_tracks,
    };
    Dataset::from_parts(manifest, frames, streams)
}
