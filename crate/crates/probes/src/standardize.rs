//! Feature and target standardization fitted on training data.

use crate::error::{ProbeError, Result};
use crate::tape::Mat;
use serde::{Deserialize, Serialize};
use tspsense::features::CandidateFeatures;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviations, with zero-variance features set to 1.
    pub std: Vec<f64>,
    /// Features whose training variance was zero.
    pub flagged: Vec<usize>,
    pub target_mean: Option<f64>,
    pub target_std: Option<f64>,
}

fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer { mean: vec![0.0; dim], std: vec![1.0; dim], flagged: Vec::new(), target_mean: None, target_std: None }
    }

    pub fn with_target(mut self, mean: f64, std: f64) -> Self {
        self.target_mean = Some(mean);
        self.target_std = Some(if std > 0.0 { std } else { 1.0 });
        self
    }

    /// Pools every candidate row of the training instances. Targets, when
    /// given, are pooled the same way.
    pub fn fit(features: &[&CandidateFeatures], targets: Option<&[&[f64]]>) -> Result<Self> {
        let dim = features.first().map(|f| f.dim()).ok_or_else(|| ProbeError::Missing("no training features".into()))?;
        if let Some(bad) = features.iter().find(|f| f.dim() != dim) {
            return Err(ProbeError::Dim { expected: dim, got: bad.dim() });
        }
        let mut st = Standardizer::identity(dim);
        for j in 0..dim {
            let col: Vec<f64> = features.iter().flat_map(|f| f.iter_rows().map(move |r| r[j])).collect();
            let (mean, std) = moments(&col);
            st.mean[j] = mean;
            if std > 1e-12 * mean.abs().max(1.0) {
                st.std[j] = std;
            } else {
                st.flagged.push(j);
            }
        }
        if !st.flagged.is_empty() {
            log::warn!("{} feature(s) have zero training variance: {:?}", st.flagged.len(), st.flagged);
        }
        if let Some(targets) = targets {
            let (mean, std) = moments(&targets.concat());
            st = st.with_target(mean, std);
        }
        Ok(st)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn has_target(&self) -> bool {
        self.target_mean.is_some() && self.target_std.is_some()
    }

    pub fn transform(&self, features: &CandidateFeatures) -> Result<Mat> {
        if features.dim() != self.dim() {
            return Err(ProbeError::Dim { expected: self.dim(), got: features.dim() });
        }
        let d = self.dim();
        let data = features
            .data()
            .iter()
            .enumerate()
            .map(|(k, v)| (v - self.mean[k % d]) / self.std[k % d])
            .collect();
        Ok(Mat::from_vec(features.rows(), d, data))
    }

    pub fn standardize_target(&self, y: f64) -> f64 {
        (y - self.target_mean.unwrap_or(0.0)) / self.target_std.unwrap_or(1.0)
    }

    pub fn unstandardize_target(&self, z: f64) -> f64 {
        z * self.target_std.unwrap_or(1.0) + self.target_mean.unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tspsense::Task;

    #[test]
    fn fit_and_transform() {
        let a = CandidateFeatures::from_rows(Task::Removal, &[vec![1.0, 5.0], vec![3.0, 5.0]]).unwrap();
        let b = CandidateFeatures::from_rows(Task::Removal, &[vec![5.0, 5.0]]).unwrap();
        let st = Standardizer::fit(&[&a, &b], Some(&[&[1.0, 2.0], &[3.0]])).unwrap();
        assert_eq!(st.mean, vec![3.0, 5.0]);
        assert!((st.std[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(st.std[1], 1.0);
        assert_eq!(st.flagged, vec![1]);
        let x = st.transform(&a).unwrap();
        assert_eq!(x.at(0, 1), 0.0);
        assert!((x.at(0, 0) + x.at(1, 0) + st.transform(&b).unwrap().at(0, 0)).abs() < 1e-12);
        assert_eq!(st.target_mean, Some(2.0));
    }

    #[test]
    fn target_roundtrip() {
        let st = Standardizer::identity(1).with_target(3.7, 0.25);
        for y in [-10.0, 0.0, 3.7, 1234.5678] {
            assert!((st.unstandardize_target(st.standardize_target(y)) - y).abs() < 1e-9);
        }
    }
}
