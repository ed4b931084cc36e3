use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One simulated trajectory of risk-factor innovations: a `d x T` real matrix
/// stored time-major, so that column `t` (the innovation at step `t + 1`) is
/// the contiguous slice `data[t * d..(t + 1) * d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    dim: usize,
    steps: usize,
    data: Vec<f64>,
}

impl Path {
    pub fn new(dim: usize, steps: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || steps == 0 {
            return Err(Error::input("path dimensions must be positive"));
        }
        if data.len() != dim * steps {
            return Err(Error::input(format!(
                "path data has length {} but shape is {dim}x{steps}",
                data.len()
            )));
        }
        Ok(Self { dim, steps, data })
    }

    pub fn zeros(dim: usize, steps: usize) -> Self {
        Self {
            dim,
            steps,
            data: vec![0.0; dim * steps],
        }
    }

    /// Scalar path for `d = 1`.
    pub fn scalar(values: &[f64]) -> Self {
        Self {
            dim: 1,
            steps: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// The per-step point `x_t` for `t` in `0..steps` (zero-based).
    pub fn step(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// The first `t` columns.
    pub fn prefix(&self, t: usize) -> &[f64] {
        &self.data[..t * self.dim]
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Bitwise equality, used for duplicate detection.
    pub fn bitwise_eq(&self, other: &Path) -> bool {
        self.dim == other.dim
            && self.steps == other.steps
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub(crate) fn check_shape(&self, dim: usize, steps: usize) -> Result<()> {
        if self.dim != dim || self.steps != steps {
            return Err(Error::input(format!(
                "path has shape {}x{} but {dim}x{steps} was expected",
                self.dim, self.steps
            )));
        }
        Ok(())
    }

    /// Concatenate a realized prefix with a tail of further innovations.
    pub fn from_prefix_and_tail(dim: usize, prefix: &[f64], tail: &[f64]) -> Result<Self> {
        let mut data = Vec::with_capacity(prefix.len() + tail.len());
        data.extend_from_slice(prefix);
        data.extend_from_slice(tail);
        let steps = data.len() / dim.max(1);
        Self::new(dim, steps, data)
    }
}
