//! Frame-level and cohort-level data operations.

use ndarray::ArrayView3;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::stream_encoder::StreamSeries;

/// Per-channel distance to pure blue below which a pixel counts as blue.
pub const BLUE_TOLERANCE: f32 = 0.1;
/// Fraction of blue pixels above which a frame is out of body.
pub const BLUE_FRACTION: f64 = 0.99;

/// True iff more than 99% of the pixels of an `(H, W, 3)` frame are within
/// [`BLUE_TOLERANCE`] of `(0, 0, 1)` in every channel.
pub fn detect_out_of_body(frame: ArrayView3<f32>) -> Result<bool> {
    let (h, w, c) = frame.dim();
    if c != 3 {
        return Err(Error::Dimension(format!("expected 3 channels, got {c}")));
    }
    if h * w == 0 {
        return Err(Error::Dimension("empty frame".into()));
    }
    let mut blue = 0usize;
    for y in 0..h {
        for x in 0..w {
            let px = [frame[[y, x, 0]], frame[[y, x, 1]], frame[[y, x, 2]]];
            if px[0].abs() <= BLUE_TOLERANCE && px[1].abs() <= BLUE_TOLERANCE && (px[2] - 1.0).abs() <= BLUE_TOLERANCE {
                blue += 1;
            }
        }
    }
    Ok(blue as f64 / (h * w) as f64 > BLUE_FRACTION)
}

/// Merges per-frame out-of-body flags into half-open `[start, end)` second spans.
pub fn skip_segments(flags: &[bool], fps: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &f) in flags.iter().chain(std::iter::once(&false)).enumerate() {
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s as f64 / fps, i as f64 / fps));
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Anchor times `0, interval, 2·interval, …` whose clip `[t, t + clip)` fits
/// in the video and does not intersect any skipped `[s, e)` span.
pub fn dense_clip_index(
    duration: f64,
    clip_duration: f64,
    interval: f64,
    skip: &[(f64, f64)],
) -> Result<Vec<f64>> {
    if !(clip_duration > 0.0 && interval > 0.0) {
        return Err(Error::InvalidArgument("clip duration and interval must be positive".into()));
    }
    if clip_duration > duration {
        return Err(Error::InvalidArgument(format!(
            "clip of {clip_duration} s is longer than the {duration} s video"
        )));
    }
    let count = ((duration - clip_duration) / interval + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| i as f64 * interval)
        .filter(|&a| !skip.iter().any(|&(s, e)| a < e && s < a + clip_duration))
        .collect())
}

/// Linear interpolation per channel at `times`, clamped to the first/last
/// sample outside the stream's range.
pub fn resample_stream(stream: &StreamSeries, times: &[f64]) -> Result<StreamSeries> {
    if stream.is_empty() {
        return Err(Error::Empty("cannot resample an empty stream".into()));
    }
    let ts = &stream.timestamps;
    let n = ts.len();
    let mut values = Mat::zeros((times.len(), stream.num_channels()));
    for (i, &t) in times.iter().enumerate() {
        let (lo, hi, frac) = if t <= ts[0] {
            (0, 0, 0.0)
        } else if t >= ts[n - 1] {
            (n - 1, n - 1, 0.0)
        } else {
            let hi = ts.partition_point(|&x| x <= t);
            let lo = hi - 1;
            (lo, hi, (t - ts[lo]) / (ts[hi] - ts[lo]))
        };
        for c in 0..stream.num_channels() {
            let a = stream.values[[lo, c]];
            let b = stream.values[[hi, c]];
            values[[i, c]] = if frac == 0.0 { a } else { a + (b - a) * frac };
        }
    }
    StreamSeries::new(stream.names.clone(), stream.units.clone(), times.to_vec(), values)
}

/// Which population the median threshold is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianPopulation {
    #[default]
    TrainingSplit,
    FullCohort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binarized {
    pub threshold: f64,
    pub labels: Vec<usize>,
}

/// Median of a nonempty sample (mean of the two middle values for even sizes).
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median of an empty list".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Class 0 iff value ≤ median of `values`.
pub fn binarize_by_median(values: &[f64]) -> Result<Binarized> {
    let threshold = median(values)?;
    Ok(Binarized {
        threshold,
        labels: apply_threshold(values, threshold),
    })
}

pub fn apply_threshold(values: &[f64], threshold: f64) -> Vec<usize> {
    values.iter().map(|&v| usize::from(v > threshold)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub id: String,
    /// Days.
    pub length_of_stay: f64,
    /// Comprehensive complication index in `[0, 100]`.
    pub cci: f64,
}

impl OutcomeRecord {
    pub fn new(id: impl Into<String>, length_of_stay: f64, cci: f64) -> Result<Self> {
        let r = Self {
            id: id.into(),
            length_of_stay,
            cci,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_of_stay >= 0.0 && self.length_of_stay.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "length of stay {} for `{}` must be ≥ 0",
                self.length_of_stay, self.id
            )));
        }
        if !(0.0..=100.0).contains(&self.cci) {
            return Err(Error::InvalidArgument(format!("CCI {} for `{}` outside [0, 100]", self.cci, self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    LengthOfStay,
    Cci,
}

/// Median-binarized outcome labels for every record.
///
/// With [`MedianPopulation::TrainingSplit`] the threshold comes from the
/// records whose id is in `train_ids`; otherwise from all records.
pub fn binarize_outcomes(
    records: &[OutcomeRecord],
    outcome: Outcome,
    population: MedianPopulation,
    train_ids: &[String],
) -> Result<Binarized> {
    for r in records {
        r.validate()?;
    }
    let value = |r: &OutcomeRecord| match outcome {
        Outcome::LengthOfStay => r.length_of_stay,
        Outcome::Cci => r.cci,
    };
    let basis: Vec<f64> = records
        .iter()
        .filter(|r| population == MedianPopulation::FullCohort || train_ids.contains(&r.id))
        .map(value)
        .collect();
    let threshold = median(&basis)?;
    let all: Vec<f64> = records.iter().map(value).collect();
    Ok(Binarized {
        threshold,
        labels: apply_threshold(&all, threshold),
    })
}
