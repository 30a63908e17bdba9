use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::error::{Error, Result};

/// `(n × d)` embedding tokens, one token per row.
pub type TokenSequence = Mat;

/// The shared `(n_s × d)` representation initialised by the video backbone
/// and updated by fusion layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub tokens: Mat,
}

impl StateVector {
    pub fn new(tokens: Mat) -> Result<Self> {
        if tokens.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("state vector has non-finite entries".into()));
        }
        Ok(Self { tokens })
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }

    /// Mean over elements of the squared difference to `other`.
    pub fn mean_squared_change(&self, other: &StateVector) -> Result<f64> {
        if self.tokens.dim() != other.tokens.dim() {
            return Err(Error::Shape(format!(
                "state shapes {:?} vs {:?}",
                self.tokens.dim(),
                other.tokens.dim()
            )));
        }
        let diff = &self.tokens - &other.tokens;
        Ok(diff.mapv(|x| x * x).mean().unwrap_or(0.0))
    }
}
