// Central finite differences against the reverse-mode gradients of one
// fusion layer.

use fusionbench::autodiff::{Graph, Mat};
use fusionbench::nn::Mode;
use fusionbench::stream_encoder::{fusion_layer_graph, init_fusion_params};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (d, heads) = (8, 2);
    let mut params = init_fusion_params(d, heads, 1, 0)?.params;
    for (i, (_, v)) in params.iter_mut().enumerate() {
        v.mapv_inplace(|x| x + 0.1 * ((i + 1) as f64).sin());
    }
    let state = Mat::from_shape_fn((4, d), |(i, j)| ((i * d + j) as f64 * 0.37).sin());
    let tokens = Mat::from_shape_fn((6, d), |(i, j)| ((i * d + j) as f64 * 0.11).cos());

    let loss = |s: &Mat| -> Result<(f64, Mat), Box<dyn std::error::Error>> {
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let sv = g.leaf(s.clone());
        let tv = g.leaf(tokens.clone());
        let out = fusion_layer_graph(&mut g, &p, 1, heads, tv, sv, &mut Mode::Eval)?;
        let sq = g.square(out);
        let l = g.sum(sq);
        let grads = g.backward(l);
        Ok((g.scalar(l), grads.get_or_zeros(sv, s.dim())))
    };

    let (_, analytic) = loss(&state)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for idx in ndarray::indices(state.dim()) {
        let mut up = state.clone();
        up[idx] += h;
        let mut down = state.clone();
        down[idx] -= h;
        let numeric = (loss(&up)?.0 - loss(&down)?.0) / (2.0 * h);
        worst = worst.max((numeric - analytic[idx]).abs() / numeric.abs().max(analytic[idx].abs()).max(1e-8));
    }
    println!("max relative error over {} state entries: {worst:.2e}", state.len());
    Ok(())
}
