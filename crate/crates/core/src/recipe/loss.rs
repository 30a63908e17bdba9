use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::decoder::{cross_entropy, Logits};
use crate::error::{Error, Result};
use crate::tokens::StateVector;

/// Relative weight of the state-change penalty.
pub const DEFAULT_LAMBDA: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub task: f64,
    pub penalty: f64,
    pub total: f64,
}

/// Cross-entropy plus `λ · mean((s_out − s_in)²)`.
pub fn combined_loss(
    logits: &Logits,
    label: usize,
    s_out: &StateVector,
    s_in: &StateVector,
    lambda: f64,
) -> Result<LossReport> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("λ must be finite and ≥ 0, got {lambda}")));
    }
    let task = cross_entropy(logits, label)?;
    let penalty = s_out.mean_squared_change(s_in)?;
    Ok(LossReport {
        task,
        penalty,
        total: task + lambda * penalty,
    })
}

/// Graph form of [`combined_loss`]; returns `(task, penalty, total)` nodes.
pub fn combined_loss_graph(
    g: &mut Graph,
    logits: Var,
    label: usize,
    s_out: Var,
    s_in: Var,
    lambda: f64,
) -> Result<(Var, Var, Var)> {
    if g.shape(s_out) != g.shape(s_in) {
        return Err(Error::Shape(format!(
            "state shapes {:?} vs {:?}",
            g.shape(s_out),
            g.shape(s_in)
        )));
    }
    let classes = g.shape(logits).1;
    if label >= classes {
        return Err(Error::InvalidArgument(format!("label {label} out of range for {classes} classes")));
    }
    let task = g.cross_entropy(logits, label);
    let diff = g.sub(s_out, s_in);
    let sq = g.square(diff);
    let penalty = g.mean(sq);
    let weighted = g.scale(penalty, lambda);
    let total = g.add(task, weighted);
    Ok((task, penalty, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Mat;
    use ndarray::array;

    #[test]
    fn zero_change_means_plain_cross_entropy() {
        let l = Logits { values: array![0.2, -0.3] };
        let s = StateVector::new(Mat::ones((3, 4))).unwrap();
        let r = combined_loss(&l, 1, &s, &s, 1e-3).unwrap();
        assert_eq!(r.penalty, 0.0);
        assert_eq!(r.total, r.task);
    }

    #[test]
    fn arithmetic_example() {
        // Two-class logits (z, 0) with CE(label 0) = ln(1 + e^{-z}) = 0.7.
        let z = -(0.7f64.exp() - 1.0).ln();
        let l = Logits { values: array![z, 0.0] };
        let s_in = StateVector::new(Mat::zeros((2, 2))).unwrap();
        let s_out = StateVector::new(Mat::from_elem((2, 2), 2f64.sqrt())).unwrap();
        let r = combined_loss(&l, 0, &s_out, &s_in, 1e-3).unwrap();
        assert!((r.task - 0.7).abs() < 1e-12);
        assert!((r.penalty - 2.0).abs() < 1e-12);
        assert!((r.total - 0.702).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_is_task_loss() {
        let l = Logits { values: array![1.0, 0.0, -1.0] };
        let a = StateVector::new(Mat::zeros((1, 2))).unwrap();
        let b = StateVector::new(Mat::ones((1, 2))).unwrap();
        let r = combined_loss(&l, 2, &a, &b, 0.0).unwrap();
        assert_eq!(r.total, r.task);
        assert!(combined_loss(&l, 2, &a, &b, -1.0).is_err());
        let c = StateVector::new(Mat::ones((2, 2))).unwrap();
        assert!(combined_loss(&l, 0, &a, &c, 1.0).is_err());
    }

    #[test]
    fn graph_form_matches_closed_form() {
        let logits = array![[0.4, -1.0, 0.25]];
        let s_in = array![[0.1, 0.2], [0.3, -0.4]];
        let s_out = array![[0.0, 0.5], [1.3, -0.4]];
        let mut g = Graph::new();
        let lv = g.leaf(logits.clone());
        let so = g.leaf(s_out.clone());
        let si = g.leaf(s_in.clone());
        let (_, _, total) = combined_loss_graph(&mut g, lv, 1, so, si, 0.5).unwrap();
        let r = combined_loss(
            &Logits { values: logits.row(0).to_owned() },
            1,
            &StateVector::new(s_out).unwrap(),
            &StateVector::new(s_in).unwrap(),
            0.5,
        )
        .unwrap();
        assert!((g.scalar(total) - r.total).abs() < 1e-14);
    }
}
