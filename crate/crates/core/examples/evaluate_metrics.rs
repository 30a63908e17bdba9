// IoU, accuracy and the aIoU / mIoU / qIoU aggregates, with and without the
// exception class.

use fusionbench::evaluation::{accuracy, aggregate, compute_report, per_class_iou, render_table, PredictionTrack};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let t = PredictionTrack::from_labels("case", 2, &[0, 0, 1, 1], &[0, 1, 1, 1])?;
    println!("IoU0 {:?}  IoU1 {:?}  acc {}", per_class_iou(&t, 0)?, per_class_iou(&t, 1)?, accuracy(std::slice::from_ref(&t))?);

    let a = aggregate(&[0.0, 0.2, 0.4, 0.6, 0.8, 1.0])?;
    println!("aIoU {:.4}  mIoU {:.4}  qIoU {:.4}", a.aiou, a.miou, a.qiou);

    let tracks = vec![
        PredictionTrack::from_labels("v1", 14, &[0, 0, 1, 13, 13, 2], &[0, 1, 1, 13, 2, 2])?,
        PredictionTrack::from_labels("v2", 14, &[3, 3, 4, 4, 13], &[3, 3, 4, 13, 13])?,
    ];
    let without = compute_report(&tracks, Some(13), false)?;
    let with = compute_report(&tracks, Some(13), true)?;
    print!("{}", render_table(&[("excluding 13", &without), ("including 13", &with)]));
    println!("{}", with.metadata.quantile_convention);
    Ok(())
}
