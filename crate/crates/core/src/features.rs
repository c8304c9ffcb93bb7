//! Per-candidate feature matrices, shared by geometry and activation sources so
//! probes never need to know where their inputs came from.

use crate::error::{Error, Result};
use crate::Task;
use serde::{Deserialize, Serialize};

/// Row-major `rows x dim` matrix; row `t` describes candidate `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateFeatures {
    pub task: Task,
    dim: usize,
    data: Vec<f64>,
}

impl CandidateFeatures {
    pub fn new(task: Task, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Invalid(format!(
                "feature buffer of length {} does not split into rows of dimension {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite feature value in row {}", pos / dim)));
        }
        Ok(CandidateFeatures { task, dim, data })
    }

    pub fn from_rows(task: Task, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Invalid("feature rows have different lengths".into()));
        }
        Self::new(task, dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checks() {
        let f = CandidateFeatures::from_rows(Task::Removal, &[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!((f.rows(), f.dim()), (2, 2));
        assert_eq!(f.row(1), &[3.0, 4.0]);
        assert!(CandidateFeatures::new(Task::Removal, 3, vec![0.0; 4]).is_err());
        assert!(CandidateFeatures::new(Task::Removal, 1, vec![f64::NAN]).is_err());
        assert!(CandidateFeatures::from_rows(Task::Forbid, &[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
