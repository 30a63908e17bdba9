// Generate a synthetic dataset, write it in the on-disk layout, load it back.

use fusionbench::datapipe::{make_synthetic_dataset, ClipSpec, Dataset, LabelSource, Split, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSpec {
        n_videos: 6,
        duration: 30.0,
        out_of_body_segments: 1,
        ..SynthSpec::new(LabelSource::Streams)
    };
    let ds = make_synthetic_dataset(42, &spec)?;
    let dir = tempfile::tempdir()?;
    let manifest = ds.write(dir.path())?;
    let back = Dataset::load(&manifest)?;
    assert_eq!(back.manifest, ds.manifest);

    let clip = ClipSpec { frames: 8, interval: 1.0 };
    for split in Split::ALL {
        let clips = back.clips(split, &clip)?;
        let ones = clips.iter().filter(|c| c.label == 1).count();
        println!("{:>5}: {:>3} clips, {:.2} class 1", split.name(), clips.len(), ones as f64 / clips.len().max(1) as f64);
    }
    let v = back.videos.values().next().expect("nonempty");
    println!("{}: {} frames, out-of-body spans {:?}", v.entry.id, v.entry.frame_count, v.skip);
    Ok(())
}
