//! CSV label tracks and stream tables.
//!
//! Label tracks: header `timestamp,label`, one row per frame.
//! Streams: header `timestamp,<name> [<unit>],...`, one row per sample.

use std::path::Path;

use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::stream_encoder::StreamSeries;

pub fn write_label_track(path: &Path, fps: f64, labels: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "label"])?;
    for (i, y) in labels.iter().enumerate() {
        w.write_record([format!("{}", i as f64 / fps), y.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_label_track(path: &Path) -> Result<Vec<usize>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::schema(path, "file", e.to_string()))?;
    let headers = r.headers()?.clone();
    if headers.len() != 2 || &headers[1] != "label" {
        return Err(Error::schema(path, "header", "expected `timestamp,label`"));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let y = rec[1]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::schema(path, format!("row {i}.label"), e.to_string()))?;
        out.push(y);
    }
    Ok(out)
}

/// Splits `heart_rate [bpm]` into `("heart_rate", "bpm")`.
fn parse_column(header: &str) -> (String, String) {
    let h = header.trim();
    match (h.rfind('['), h.ends_with(']')) {
        (Some(open), true) => (h[..open].trim().to_string(), h[open + 1..h.len() - 1].trim().to_string()),
        _ => (h.to_string(), String::new()),
    }
}

pub fn write_streams(path: &Path, s: &StreamSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["timestamp".to_string()];
    for (n, u) in s.names.iter().zip(&s.units) {
        header.push(format!("{n} [{u}]"));
    }
    w.write_record(&header)?;
    for (i, t) in s.timestamps.iter().enumerate() {
        let mut row = vec![format!("{t}")];
        row.extend(s.values.row(i).iter().map(|v| format!("{v}")));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_streams(path: &Path) -> Result<StreamSeries> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::schema(path, "file", e.to_string()))?;
    let headers = r.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "timestamp" {
        return Err(Error::schema(path, "header", "expected `timestamp` followed by value columns"));
    }
    let (names, units): (Vec<_>, Vec<_>) = headers.iter().skip(1).map(parse_column).unzip();
    let mut timestamps = Vec::new();
    let mut flat = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |j: usize| {
            rec[j]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::schema(path, format!("row {i}.{}", &headers[j]), e.to_string()))
        };
        timestamps.push(parse(0)?);
        for j in 1..headers.len() {
            flat.push(parse(j)?);
        }
    }
    let values = Mat::from_shape_vec((timestamps.len(), names.len()), flat)
        .map_err(|e| Error::schema(path, "rows", e.to_string()))?;
    StreamSeries::new(names, units, timestamps, values)
        .map_err(|e| Error::schema(path, "series", e.to_string()))
}
