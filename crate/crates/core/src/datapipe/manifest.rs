//! Dataset manifests.
//!
//! A manifest is a JSON document listing videos, their frame/label/stream
//! files (paths relative to the manifest), the task, and the split
//! assignment. Label tracks are loaded and validated together with the
//! manifest; frames and streams are read on demand by [`super::Dataset`].

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tables::{read_label_track, write_label_track};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskDescriptor {
    /// Surgical phase recognition; class 13 is the exception class.
    Phase,
    BinaryLos,
    BinaryCci,
    Synthetic { num_classes: usize },
}

impl TaskDescriptor {
    pub fn num_classes(&self) -> usize {
        match self {
            TaskDescriptor::Phase => 14,
            TaskDescriptor::BinaryLos | TaskDescriptor::BinaryCci => 2,
            TaskDescriptor::Synthetic { num_classes } => *num_classes,
        }
    }

    /// Class reported both with and without in aggregate metrics.
    pub fn exception_class(&self) -> Option<usize> {
        match self {
            TaskDescriptor::Phase => Some(13),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub id: String,
    /// Raw frame container, relative to the manifest directory.
    pub frames: PathBuf,
    pub fps: f64,
    pub frame_count: usize,
    /// Seconds.
    pub duration: f64,
    pub labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub streams: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub val: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub task: TaskDescriptor,
    pub videos: Vec<VideoEntry>,
    pub splits: Splits,
    /// Frame-wise class indices per video id.
    #[serde(skip)]
    pub label_tracks: BTreeMap<String, Vec<usize>>,
}

/// Per-split class composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStatistics {
    pub split: Split,
    pub videos: usize,
    /// Seconds of video per class.
    pub seconds_per_class: BTreeMap<usize, f64>,
}

impl DatasetManifest {
    pub fn video(&self, id: &str) -> Option<&VideoEntry> {
        self.videos.iter().find(|v| v.id == id)
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|s| self.splits.get(*s).iter().any(|v| v == id))
    }

    pub fn split_videos(&self, split: Split) -> Vec<&VideoEntry> {
        self.splits
            .get(split)
            .iter()
            .filter_map(|id| self.video(id))
            .collect()
    }

    /// Checks every invariant; `origin` names the file in diagnostics.
    pub fn validate(&self, origin: &Path) -> Result<()> {
        let classes = self.task.num_classes();
        if classes < 2 {
            return Err(Error::schema(origin, "task", "need at least 2 classes"));
        }
        let mut seen = BTreeSet::new();
        for (i, v) in self.videos.iter().enumerate() {
            let field = |f: &str| format!("videos[{i}].{f}");
            if v.id.is_empty() {
                return Err(Error::schema(origin, field("id"), "empty id"));
            }
            if !seen.insert(v.id.as_str()) {
                return Err(Error::schema(origin, field("id"), format!("duplicate id `{}`", v.id)));
            }
            if !(v.fps > 0.0 && v.fps.is_finite()) {
                return Err(Error::schema(origin, field("fps"), "must be positive"));
            }
            if v.frame_count == 0 {
                return Err(Error::schema(origin, field("frame_count"), "must be positive"));
            }
            let implied = v.frame_count as f64 / v.fps;
            if (implied - v.duration).abs() > 0.5 / v.fps {
                return Err(Error::schema(
                    origin,
                    field("duration"),
                    format!("{} s disagrees with frame_count/fps = {implied} s", v.duration),
                ));
            }
            let track = self
                .label_tracks
                .get(&v.id)
                .ok_or_else(|| Error::schema(origin, field("labels"), "label track missing"))?;
            if track.len() != v.frame_count {
                return Err(Error::schema(
                    origin,
                    field("labels"),
                    format!("{} labels for {} frames", track.len(), v.frame_count),
                ));
            }
            if let Some(bad) = track.iter().find(|&&y| y >= classes) {
                return Err(Error::schema(
                    origin,
                    field("labels"),
                    format!("label {bad} out of range for {classes} classes"),
                ));
            }
        }
        let mut assigned: BTreeMap<&str, Split> = BTreeMap::new();
        for split in Split::ALL {
            for id in self.splits.get(split) {
                if !seen.contains(id.as_str()) {
                    return Err(Error::schema(
                        origin,
                        format!("splits.{}", split.name()),
                        format!("unknown video `{id}`"),
                    ));
                }
                if let Some(prev) = assigned.insert(id, split) {
                    return Err(Error::schema(
                        origin,
                        format!("splits.{}", split.name()),
                        format!("video `{id}` already assigned to {}", prev.name()),
                    ));
                }
            }
        }
        if let Some(missing) = seen.iter().find(|id| !assigned.contains_key(*id)) {
            return Err(Error::schema(origin, "splits", format!("video `{missing}` has no split")));
        }
        Ok(())
    }

    pub fn split_statistics(&self) -> Vec<SplitStatistics> {
        Split::ALL
            .into_iter()
            .map(|split| {
                let mut seconds_per_class = BTreeMap::new();
                let vids = self.split_videos(split);
                for v in &vids {
                    if let Some(track) = self.label_tracks.get(&v.id) {
                        for &y in track {
                            *seconds_per_class.entry(y).or_insert(0.0) += 1.0 / v.fps;
                        }
                    }
                }
                SplitStatistics {
                    split,
                    videos: vids.len(),
                    seconds_per_class,
                }
            })
            .collect()
    }
}

/// Reads, resolves and validates a manifest and its label tracks.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| {
        Error::schema(path, format!("line {} column {}", e.line(), e.column()), e.to_string())
    })?;
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    for (i, v) in m.videos.iter().enumerate() {
        let lp = root.join(&v.labels);
        if !lp.exists() {
            return Err(Error::schema(path, format!("videos[{i}].labels"), format!("{} not found", lp.display())));
        }
        let track = read_label_track(&lp)?;
        m.label_tracks.insert(v.id.clone(), track);
    }
    m.validate(path)?;
    for s in m.split_statistics() {
        log::info!(
            "{}: {} videos, seconds per class {:?}",
            s.split.name(),
            s.videos,
            s.seconds_per_class
        );
    }
    Ok(m)
}

/// Writes the manifest JSON and its label tracks (relative to `path`).
pub fn write_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    m.validate(path)?;
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    for v in &m.videos {
        let lp = root.join(&v.labels);
        if let Some(dir) = lp.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_label_track(&lp, v.fps, &m.label_tracks[&v.id])?;
    }
    let text = serde_json::to_string_pretty(m)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DatasetManifest {
        let mut label_tracks = BTreeMap::new();
        let mut videos = Vec::new();
        for (i, id) in ["a", "b", "c"].iter().enumerate() {
            videos.push(VideoEntry {
                id: id.to_string(),
                frames: format!("frames/{id}.fbr").into(),
                fps: 2.0,
                frame_count: 8,
                duration: 4.0,
                labels: format!("labels/{id}.csv").into(),
                streams: None,
            });
            label_tracks.insert(id.to_string(), vec![i % 2; 8]);
        }
        DatasetManifest {
            name: "t".into(),
            task: TaskDescriptor::Synthetic { num_classes: 2 },
            videos,
            splits: Splits {
                train: vec!["a".into()],
                val: vec!["b".into()],
                test: vec!["c".into()],
            },
            label_tracks,
        }
    }

    #[test]
    fn write_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        let m = sample();
        write_manifest(&m, &p).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), m);
    }

    #[test]
    fn label_length_mismatch_is_rejected() {
        let mut m = sample();
        m.label_tracks.get_mut("b").unwrap().pop();
        match m.validate(Path::new("m.json")) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "videos[1].labels"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let mut m = sample();
        m.splits.test.push("a".into());
        match m.validate(Path::new("m.json")) {
            Err(Error::Schema { field, message, .. }) => {
                assert_eq!(field, "splits.test");
                assert!(message.contains("already assigned"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unassigned_and_unknown_videos() {
        let mut m = sample();
        m.splits.test.clear();
        assert!(m.validate(Path::new("m.json")).is_err());
        let mut m = sample();
        m.splits.val.push("zzz".into());
        assert!(m.validate(Path::new("m.json")).is_err());
    }

    #[test]
    fn missing_manifest_is_io_error() {
        assert!(matches!(load_manifest(Path::new("/nonexistent/m.json")), Err(Error::Io { .. })));
    }

    #[test]
    fn statistics_sum_durations() {
        let stats = sample().split_statistics();
        assert_eq!(stats[0].videos, 1);
        assert_eq!(stats[0].seconds_per_class[&0], 4.0);
        assert_eq!(stats[1].seconds_per_class[&1], 4.0);
    }

    #[test]
    fn task_classes() {
        assert_eq!(TaskDescriptor::Phase.num_classes(), 14);
        assert_eq!(TaskDescriptor::Phase.exception_class(), Some(13));
        assert_eq!(TaskDescriptor::BinaryCci.num_classes(), 2);
        assert_eq!(TaskDescriptor::BinaryLos.exception_class(), None);
    }
}
