//! In-memory dataset: frames, label tracks and streams per video.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array4, Axis};
use serde::{Deserialize, Serialize};

use super::manifest::{load_manifest, write_manifest, DatasetManifest, Split, VideoEntry};
use super::ops::{dense_clip_index, detect_out_of_body, resample_stream, skip_segments};
use super::raw::{read_frames, write_frames};
use super::tables::{read_streams, write_streams};
use crate::backbone::VideoClip;
use crate::error::{Error, Result};
use crate::stream_encoder::StreamSeries;

/// Clip geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub frames: usize,
    /// Seconds between consecutive anchors.
    pub interval: f64,
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self {
            frames: 16,
            interval: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub entry: VideoEntry,
    pub frames: Array4<f32>,
    pub labels: Vec<usize>,
    pub streams: Option<StreamSeries>,
    /// Out-of-body spans in seconds, `[start, end)`.
    pub skip: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    pub video_id: String,
    pub clip: VideoClip,
    /// Streams resampled at the clip's frame timestamps.
    pub streams: Option<StreamSeries>,
    pub label: usize,
    pub anchor_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub videos: BTreeMap<String, VideoRecord>,
}

impl Dataset {
    /// Assembles a dataset; out-of-body spans are detected from the frames.
    pub fn from_parts(
        manifest: DatasetManifest,
        mut frames: BTreeMap<String, Array4<f32>>,
        mut streams: BTreeMap<String, StreamSeries>,
    ) -> Result<Self> {
        manifest.validate(Path::new(&manifest.name))?;
        let mut videos = BTreeMap::new();
        for entry in &manifest.videos {
            let f = frames
                .remove(&entry.id)
                .ok_or_else(|| Error::MissingParam(format!("frames for video `{}`", entry.id)))?;
            if f.len_of(Axis(0)) != entry.frame_count {
                return Err(Error::Shape(format!(
                    "video `{}` has {} frames, manifest says {}",
                    entry.id,
                    f.len_of(Axis(0)),
                    entry.frame_count
                )));
            }
            let flags = f
                .axis_iter(Axis(0))
                .map(detect_out_of_body)
                .collect::<Result<Vec<_>>>()?;
            let skip = skip_segments(&flags, entry.fps);
            videos.insert(
                entry.id.clone(),
                VideoRecord {
                    entry: entry.clone(),
                    frames: f,
                    labels: manifest.label_tracks[&entry.id].clone(),
                    streams: streams.remove(&entry.id),
                    skip,
                },
            );
        }
        Ok(Self { manifest, videos })
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = load_manifest(manifest_path)?;
        let root = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let mut frames = BTreeMap::new();
        let mut streams = BTreeMap::new();
        for v in &manifest.videos {
            frames.insert(v.id.clone(), read_frames(&root.join(&v.frames))?);
            if let Some(sp) = &v.streams {
                streams.insert(v.id.clone(), read_streams(&root.join(sp))?);
            }
        }
        Self::from_parts(manifest, frames, streams)
    }

    /// Writes `manifest.json` plus frame, label and stream files under `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        for sub in ["frames", "labels", "streams"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        for v in self.videos.values() {
            write_frames(&dir.join(&v.entry.frames), &v.frames)?;
            if let (Some(sp), Some(s)) = (&v.entry.streams, &v.streams) {
                write_streams(&dir.join(sp), s)?;
            }
        }
        let path = dir.join("manifest.json");
        write_manifest(&self.manifest, &path)?;
        Ok(path)
    }

    pub fn has_streams(&self) -> bool {
        !self.videos.is_empty() && self.videos.values().all(|v| v.streams.is_some())
    }

    fn record(&self, id: &str) -> Result<&VideoRecord> {
        self.videos
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown video `{id}`")))
    }

    /// Dense anchors for one video, skipping out-of-body spans.
    pub fn anchors(&self, id: &str, spec: &ClipSpec) -> Result<Vec<f64>> {
        let v = self.record(id)?;
        let clip_duration = spec.frames as f64 / v.entry.fps;
        dense_clip_index(v.entry.duration, clip_duration, spec.interval, &v.skip)
    }

    pub fn clip_at(&self, id: &str, anchor_time: f64, spec: &ClipSpec) -> Result<ClipSample> {
        let v = self.record(id)?;
        let fps = v.entry.fps;
        let start = (anchor_time * fps).round() as usize;
        let end = start + spec.frames;
        if end > v.entry.frame_count {
            return Err(Error::InvalidArgument(format!(
                "clip at {anchor_time} s runs past the end of `{id}`"
            )));
        }
        let frames = v.frames.slice(s![start..end, .., .., ..]).to_owned();
        let clip = VideoClip::new(frames, fps, anchor_time)?;
        let streams = match &v.streams {
            Some(s) => {
                let times: Vec<f64> = (start..end).map(|i| i as f64 / fps).collect();
                Some(resample_stream(s, &times)?)
            }
            None => None,
        };
        Ok(ClipSample {
            video_id: id.to_string(),
            clip,
            streams,
            label: v.labels[start],
            anchor_time,
        })
    }

    /// Every dense clip of every video in `split`, in manifest order.
    pub fn clips(&self, split: Split, spec: &ClipSpec) -> Result<Vec<ClipSample>> {
        let ids = self.manifest.splits.get(split);
        if ids.is_empty() {
            return Err(Error::Empty(format!("split `{}` is empty", split.name())));
        }
        let mut out = Vec::new();
        for id in ids {
            for a in self.anchors(id, spec)? {
                out.push(self.clip_at(id, a, spec)?);
            }
        }
        Ok(out)
    }
}
