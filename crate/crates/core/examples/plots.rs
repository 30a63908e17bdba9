// Dataset composition and training-curve figures as SVG.

use fusionbench::datapipe::{make_synthetic_dataset, LabelSource, SynthSpec};
use fusionbench::plot::{plot_log, plot_manifest};
use fusionbench::recipe::LogRecord;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = make_synthetic_dataset(0, &SynthSpec { n_videos: 6, duration: 20.0, ..SynthSpec::new(LabelSource::Both) })?;
    let out = tempfile::tempdir()?;
    let mut files = plot_manifest(&ds.manifest, out.path(), None)?;
    let log: Vec<LogRecord> = (0..50)
        .map(|step| LogRecord {
            step_id: 2,
            step,
            epoch: step / 10,
            loss: 0.7 * (-(step as f64) / 20.0).exp() + 0.05,
            task_loss: 0.7 * (-(step as f64) / 20.0).exp(),
            penalty: 0.0,
            lr: 1e-3,
            wd: 1e-4,
        })
        .collect();
    files.extend(plot_log(&log, out.path(), Some("example"))?);
    for f in files {
        println!("{} ({} bytes)", f.file_name().unwrap().to_string_lossy(), std::fs::metadata(&f)?.len());
    }
    Ok(())
}
