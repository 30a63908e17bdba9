// Attentive classifier: a learned query cross-attends over state tokens.

use fusionbench::autodiff::Mat;
use fusionbench::decoder::{cross_entropy, AttentiveClassifier, DecoderConfig};
use fusionbench::tokens::StateVector;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dec = AttentiveClassifier::new(DecoderConfig::new(32, 4, 14, 0))?;
    let state = StateVector::new(Mat::from_shape_fn((16, 32), |(i, j)| ((i + 2 * j) as f64 * 0.1).sin()))?;
    let logits = dec.classify(&state)?;
    println!("{} classes, argmax {}, CE vs class 3 {:.4}", logits.num_classes(), logits.argmax(), cross_entropy(&logits, 3)?);
    println!("decoder digest {}", &dec.digest()[..16]);
    Ok(())
}
