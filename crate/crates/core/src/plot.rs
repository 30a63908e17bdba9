//! SVG figures: dataset composition per split and training curves.
//!
//! Output is a pure function of the input, so identical inputs give
//! byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::datapipe::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::recipe::LogRecord;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

/// Categorical colours, cycled for more classes.
const PALETTE: [&str; 14] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
    "#1f77b4", "#2ca02c", "#d62728", "#7f7f7f",
];

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(s: &mut String, x_label: &str, y_label: &str, y_max: f64) {
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, HEIGHT - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, x0 - 4.0, y1 + 4.0, fmt_num(y_max));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">0</text>"#, x0 - 4.0, y0 + 4.0);
}

fn fmt_num(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

/// One stacked bar per video (sorted by length), segments by class seconds.
pub fn composition_svg(manifest: &DatasetManifest, split: Split) -> Result<String> {
    let mut bars: Vec<(String, f64, BTreeMap<usize, f64>)> = manifest
        .split_videos(split)
        .into_iter()
        .map(|v| {
            let mut per_class = BTreeMap::new();
            if let Some(track) = manifest.label_tracks.get(&v.id) {
                for &y in track {
                    *per_class.entry(y).or_insert(0.0) += 1.0 / v.fps;
                }
            }
            (v.id.clone(), v.duration, per_class)
        })
        .collect();
    if bars.is_empty() {
        return Err(Error::Empty(format!("split `{}` has no videos", split.name())));
    }
    bars.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let longest = bars.iter().map(|b| b.1).fold(0.0, f64::max);
    let mut s = header(&format!("{}: {} split", manifest.name, split.name()));
    axes(&mut s, "videos (sorted by length)", "seconds", longest);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let slot = plot_w / bars.len() as f64;
    for (i, (id, _, per_class)) in bars.iter().enumerate() {
        let x = MARGIN + i as f64 * slot + 0.1 * slot;
        let mut y = HEIGHT - MARGIN;
        for (&class, &secs) in per_class {
            let h = secs / longest * plot_h;
            y -= h;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{h:.2}" fill="{}"><title>{} class {class}: {secs:.1} s</title></rect>"#,
                0.8 * slot,
                PALETTE[class % PALETTE.len()],
                escape(id)
            );
        }
    }
    let classes: Vec<usize> = {
        let mut c: Vec<usize> = bars.iter().flat_map(|b| b.2.keys().copied()).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    for (k, class) in classes.iter().enumerate() {
        let y = MARGIN + 14.0 * k as f64;
        let x = WIDTH - MARGIN + 6.0;
        let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#, y - 9.0, PALETTE[class % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{class}</text>"#, x + 14.0);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn polyline(s: &mut String, points: &[(f64, f64)], x_max: f64, y_max: f64, colour: &str) {
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let coords: Vec<String> = points
        .iter()
        .map(|&(x, y)| {
            let px = MARGIN + if x_max > 0.0 { x / x_max * plot_w } else { 0.0 };
            let py = HEIGHT - MARGIN - if y_max > 0.0 { y / y_max * plot_h } else { 0.0 };
            format!("{px:.2},{py:.2}")
        })
        .collect();
    let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
}

/// Loss curves (total and task) and the learning rate for one step's log.
pub fn curves_svg(title: &str, log: &[LogRecord]) -> Result<String> {
    if log.is_empty() {
        return Err(Error::Empty("training log is empty".into()));
    }
    let x_max = log.iter().map(|r| r.step as f64).fold(0.0, f64::max);
    let loss_max = log.iter().map(|r| r.loss.max(r.task_loss)).fold(0.0, f64::max);
    let lr_max = log.iter().map(|r| r.lr).fold(0.0, f64::max);
    let mut s = header(title);
    axes(&mut s, "optimizer step", "loss", loss_max);
    let pts = |f: fn(&LogRecord) -> f64| log.iter().map(|r| (r.step as f64, f(r))).collect::<Vec<_>>();
    polyline(&mut s, &pts(|r| r.loss), x_max, loss_max, PALETTE[0]);
    polyline(&mut s, &pts(|r| r.task_loss), x_max, loss_max, PALETTE[1]);
    // Learning rate on its own scale, dashed.
    let lr: Vec<(f64, f64)> = pts(|r| r.lr).into_iter().map(|(x, y)| (x, y / lr_max.max(f64::MIN_POSITIVE) * loss_max)).collect();
    let mut dashed = String::new();
    polyline(&mut dashed, &lr, x_max, loss_max, PALETTE[4]);
    s.push_str(&dashed.replace("/>", r#" stroke-dasharray="4 3"/>"#));
    let legend = [("total loss", PALETTE[0]), ("task loss", PALETTE[1]), (&*format!("lr (max {})", fmt_num(lr_max)), PALETTE[4])];
    for (k, (name, colour)) in legend.iter().enumerate() {
        let y = MARGIN + 14.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="10" height="3" fill="{colour}"/>"#, WIDTH - 170.0, y - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, WIDTH - 155.0, escape(name));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Reads a line-delimited JSON training log.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::schema(path, format!("line {}", i + 1), e.to_string())))
        .collect()
}

/// Inserts `<metadata>config-hash: …</metadata>` after the opening tag.
pub fn with_config_hash(svg: &str, config_hash: Option<&str>) -> String {
    match (config_hash, svg.split_once('\n')) {
        (Some(h), Some((open, rest))) => format!("{open}\n<metadata>config-hash: {}</metadata>\n{rest}", escape(h)),
        _ => svg.to_string(),
    }
}

/// Writes one composition figure per split; returns the paths.
pub fn plot_manifest(manifest: &DatasetManifest, out: &Path, config_hash: Option<&str>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut paths = Vec::new();
    for split in Split::ALL {
        if manifest.splits.get(split).is_empty() {
            continue;
        }
        let p = out.join(format!("composition_{}.svg", split.name()));
        let svg = with_config_hash(&composition_svg(manifest, split)?, config_hash);
        fs::write(&p, svg).map_err(|e| Error::io(&p, e))?;
        paths.push(p);
    }
    Ok(paths)
}

/// Writes one curve figure per step found in the log.
pub fn plot_log(log: &[LogRecord], out: &Path, config_hash: Option<&str>) -> Result<Vec<PathBuf>> {
    if log.is_empty() {
        return Err(Error::Empty("training log is empty".into()));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut by_step: BTreeMap<u8, Vec<LogRecord>> = BTreeMap::new();
    for r in log {
        by_step.entry(r.step_id).or_default().push(*r);
    }
    let mut paths = Vec::new();
    for (step, records) in by_step {
        let p = out.join(format!("curves_step{step}.svg"));
        let svg = with_config_hash(&curves_svg(&format!("step {step}"), &records)?, config_hash);
        fs::write(&p, svg).map_err(|e| Error::io(&p, e))?;
        paths.push(p);
    }
    Ok(paths)
}
