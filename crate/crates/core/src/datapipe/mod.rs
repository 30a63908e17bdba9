//! Dataset manifests, file formats, clip indexing and synthetic data.

pub mod dataset;
pub mod manifest;
pub mod ops;
pub mod raw;
pub mod synth;
pub mod tables;

pub use dataset::{ClipSample, ClipSpec, Dataset, VideoRecord};
pub use manifest::{load_manifest, write_manifest, DatasetManifest, Split, Splits, TaskDescriptor, VideoEntry};
pub use ops::{
    binarize_by_median, binarize_outcomes, dense_clip_index, detect_out_of_body, resample_stream, Binarized,
    MedianPopulation, Outcome, OutcomeRecord,
};
pub use synth::{make_synthetic_dataset, LabelSource, SynthSpec};
