//! Reverse-mode differentiation over row-major `f64` matrices.
//!
//! A [`Graph`] records every operation of a forward pass as a node on a
//! linear tape. Nodes are created in topological order, so [`Graph::backward`]
//! only has to walk the tape once in reverse. Tokens are rows throughout:
//! a `(n × d)` token sequence is an `n`-row matrix, and linear maps are
//! applied as `x · W` with `W` stored as `(in × out)`.

use ndarray::{concatenate, s, Array2, Axis};

use crate::nn::{gelu, gelu_grad};

pub type Mat = Array2<f64>;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `a (n × m) + row (1 × m)`
    AddRow(Var, Var),
    /// `a (n × m) ⊙ row (1 × m)`
    MulRow(Var, Var),
    /// Elementwise product with a constant (dropout masks).
    MulConst(Var, Mat),
    Scale(Var, f64),
    Gelu(Var),
    Abs(Var),
    Square(Var),
    /// Row-wise standardisation without affine terms; caches `1/σ` per row.
    Normalize { x: Var, inv_std: Vec<f64> },
    SoftmaxRows(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { x: Var, rows: Vec<usize> },
    MeanRows(Var),
    Mean(Var),
    Sum(Var),
    /// `-log softmax(logits)[label]` for a single `(1 × C)` logit row.
    CrossEntropy { logits: Var, label: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
}

/// The tape.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a graph.
#[derive(Debug, Clone)]
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of the given shape if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(shape))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `(1 × 1)` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row expects a (1 × m) row");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "mul_row expects a (1 × m) row");
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        let v = self.value(a) * &c;
        self.push(v, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// `(x − mean) / sqrt(var + eps)` per row.
    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (n, m) = xv.dim();
        let mut out = Mat::zeros((n, m));
        let mut inv_std = Vec::with_capacity(n);
        for (i, row) in xv.outer_iter().enumerate() {
            let mean = row.sum() / m as f64;
            let var = row.iter().map(|&z| (z - mean) * (z - mean)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (j, &z) in row.iter().enumerate() {
                out[[i, j]] = (z - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.push(out, Op::Normalize { x, inv_std })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.outer_iter_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|z| (z - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|z| z / sum);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let v = self.value(x).select(Axis(0), rows);
        self.push(
            v,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    /// Column means, `(n × m) → (1 × m)`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let v = self
            .value(x)
            .mean_axis(Axis(0))
            .expect("mean_rows on empty matrix")
            .insert_axis(Axis(0));
        self.push(v, Op::MeanRows(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x).mean().expect("mean of empty matrix");
        self.push(Mat::from_elem((1, 1), v), Op::Mean(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).sum();
        self.push(Mat::from_elem((1, 1), v), Op::Sum(x))
    }

    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Var {
        let row = self.value(logits);
        assert_eq!(row.nrows(), 1, "cross_entropy expects a single logit row");
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        let v = lse - row[[0, label]];
        self.push(Mat::from_elem((1, 1), v), Op::CrossEntropy { logits, label })
    }

    /// Back-propagates from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar loss");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&g);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::MulRow(a, row) => {
                    let ga = &g * self.value(*row);
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *row, gr);
                }
                Op::MulConst(a, c) => accumulate(&mut grads, *a, &g * c),
                Op::Scale(a, k) => accumulate(&mut grads, *a, &g * *k),
                Op::Gelu(a) => {
                    let d = self.value(*a).mapv(gelu_grad);
                    accumulate(&mut grads, *a, &g * &d);
                }
                Op::Abs(a) => {
                    let d = self.value(*a).mapv(|z| {
                        if z > 0.0 {
                            1.0
                        } else if z < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, &g * &d);
                }
                Op::Square(a) => {
                    let d = self.value(*a) * 2.0;
                    accumulate(&mut grads, *a, &g * &d);
                }
                Op::Normalize { x, inv_std } => {
                    let y = &node.value;
                    let m = y.ncols() as f64;
                    let mut gx = Mat::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let gy = g.row(i);
                        let yr = y.row(i);
                        let mean_g = gy.sum() / m;
                        let mean_gy = gy.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / m;
                        for j in 0..y.ncols() {
                            gx[[i, j]] = inv_std[i] * (gy[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut gx = Mat::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let dot: f64 = g.row(i).iter().zip(y.row(i).iter()).map(|(a, b)| a * b).sum();
                        for j in 0..y.ncols() {
                            gx[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::SliceCols { x, start } => {
                    let mut gx = Mat::zeros(self.shape(*x));
                    let len = g.ncols();
                    gx.slice_mut(s![.., *start..*start + len]).assign(&g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        accumulate(&mut grads, p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        accumulate(&mut grads, p, g.slice(s![offset..offset + h, ..]).to_owned());
                        offset += h;
                    }
                }
                Op::GatherRows { x, rows } => {
                    let mut gx = Mat::zeros(self.shape(*x));
                    for (k, &r) in rows.iter().enumerate() {
                        let mut dst = gx.row_mut(r);
                        dst += &g.row(k);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanRows(x) => {
                    let (n, _) = self.shape(*x);
                    let row = g.row(0).to_owned() / n as f64;
                    let gx = row.broadcast(self.shape(*x)).unwrap().to_owned();
                    accumulate(&mut grads, *x, gx);
                }
                Op::Mean(x) => {
                    let shape = self.shape(*x);
                    let k = g[[0, 0]] / (shape.0 * shape.1) as f64;
                    accumulate(&mut grads, *x, Mat::from_elem(shape, k));
                }
                Op::Sum(x) => {
                    let shape = self.shape(*x);
                    accumulate(&mut grads, *x, Mat::from_elem(shape, g[[0, 0]]));
                }
                Op::CrossEntropy { logits, label } => {
                    let row = self.value(*logits);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut p = row.mapv(|z| (z - max).exp());
                    let total = p.sum();
                    p.mapv_inplace(|z| z / total);
                    p[[0, *label]] -= 1.0;
                    accumulate(&mut grads, *logits, p * g[[0, 0]]);
                }
            }
            grads[idx] = Some(g);
        }
        Grads { grads }
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(x0: &Mat, f: impl Fn(&Mat) -> f64) -> Mat {
        let h = 1e-6;
        let mut out = Mat::zeros(x0.dim());
        for idx in 0..x0.len() {
            let (i, j) = (idx / x0.ncols(), idx % x0.ncols());
            let mut xp = x0.clone();
            xp[[i, j]] += h;
            let mut xm = x0.clone();
            xm[[i, j]] -= h;
            out[[i, j]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        out
    }

    fn assert_close(a: &Mat, b: &Mat, tol: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            let denom = x.abs().max(y.abs()).max(1e-8);
            assert!((x - y).abs() / denom < tol || (x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn matmul_gradient() {
        let a0 = array![[0.3, -1.2, 0.5], [0.7, 0.1, -0.4]];
        let b = array![[1.0, 0.5], [-0.3, 0.2], [0.8, -1.1]];
        let run = |a: &Mat| {
            let mut g = Graph::new();
            let av = g.leaf(a.clone());
            let bv = g.leaf(b.clone());
            let p = g.matmul(av, bv);
            let sq = g.square(p);
            let l = g.sum(sq);
            (g.scalar(l), g.backward(l).get(av).unwrap().clone())
        };
        let (_, analytic) = run(&a0);
        let numeric = numeric_grad(&a0, |a| run(a).0);
        assert_close(&analytic, &numeric, 1e-6);
    }

    #[test]
    fn normalize_softmax_gelu_chain() {
        let x0 = array![[0.3, -1.2, 0.5, 2.0], [0.7, 0.1, -0.4, 0.0]];
        let w = array![[0.2, -0.1, 0.4, 1.0], [0.3, 0.3, -0.6, 0.5]];
        let run = |x: &Mat| {
            let mut g = Graph::new();
            let xv = g.leaf(x.clone());
            let wv = g.leaf(w.clone());
            let n = g.normalize_rows(xv, 1e-5);
            let gl = g.gelu(n);
            let sm = g.softmax_rows(gl);
            let prod = g.mul_const(sm, w.clone());
            let y = g.add(prod, wv);
            let ab = g.abs(y);
            let l = g.mean(ab);
            (g.scalar(l), g.backward(l).get(xv).unwrap().clone())
        };
        let (_, analytic) = run(&x0);
        let numeric = numeric_grad(&x0, |x| run(x).0);
        assert_close(&analytic, &numeric, 1e-5);
    }

    #[test]
    fn cross_entropy_gradient_and_value() {
        let z0 = array![[0.5, -0.25, 1.5]];
        let run = |z: &Mat| {
            let mut g = Graph::new();
            let zv = g.leaf(z.clone());
            let l = g.cross_entropy(zv, 2);
            (g.scalar(l), g.backward(l).get(zv).unwrap().clone())
        };
        let (v, analytic) = run(&z0);
        let lse = (0.5f64.exp() + (-0.25f64).exp() + 1.5f64.exp()).ln();
        assert!((v - (lse - 1.5)).abs() < 1e-12);
        let numeric = numeric_grad(&z0, |z| run(z).0);
        assert_close(&analytic, &numeric, 1e-6);
    }

    #[test]
    fn structural_ops_route_gradients() {
        let x0 = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]];
        let run = |x: &Mat| {
            let mut g = Graph::new();
            let xv = g.leaf(x.clone());
            let a = g.slice_cols(xv, 1, 2);
            let b = g.gather_rows(xv, &[2, 0, 2]);
            let t = g.transpose(a);
            let c = g.concat_cols(&[t, t]);
            let r = g.mean_rows(b);
            let rr = g.concat_rows(&[r, r]);
            let m = g.mul_row(rr, r);
            let s1 = g.square(c);
            let s1 = g.sum(s1);
            let s2 = g.sum(m);
            let l = g.add(s1, s2);
            (g.scalar(l), g.backward(l).get(xv).unwrap().clone())
        };
        let (_, analytic) = run(&x0);
        let numeric = numeric_grad(&x0, |x| run(x).0);
        assert_close(&analytic, &numeric, 1e-6);
    }
}
