// Stream tokenization and the cross-attention fusion encoder. A fresh
// encoder returns the video state unchanged.

use fusionbench::autodiff::Mat;
use fusionbench::stream_encoder::{StreamEncoder, StreamEncoderConfig, StreamSeries};
use fusionbench::tokens::StateVector;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (channels, len, d) = (3, 16, 32);
    let times: Vec<f64> = (0..len).map(|i| i as f64 * 0.25).collect();
    let values = Mat::from_shape_fn((len, channels), |(t, c)| ((t + 3 * c) as f64 * 0.4).sin());
    let streams = StreamSeries::new(
        vec!["heart_rate".into(), "spo2".into(), "etco2".into()],
        vec!["bpm".into(), "%".into(), "mmHg".into()],
        times,
        values,
    )?;

    let mut enc = StreamEncoder::new(StreamEncoderConfig::standard(channels, 2, d, 7))?;
    let tokens = enc.tokenize_streams(&streams)?;
    println!("{} stream tokens of width {}", tokens.nrows(), tokens.ncols());

    let state = StateVector::new(Mat::from_shape_fn((16, d), |(i, j)| ((i * d + j) as f64).cos()))?;
    let fused = enc.encode_streams(&tokens, &state)?;
    println!("fresh encoder is the identity: {}", fused.tokens == state.tokens);

    for (_, v) in enc.fusion.params.iter_mut() {
        v.mapv_inplace(|x| x + 0.01);
    }
    let moved = enc.encode(&streams, &state)?;
    println!("after a perturbation the state moves by {:.3e} (mean squared)", moved.mean_squared_change(&state)?);
    Ok(())
}
