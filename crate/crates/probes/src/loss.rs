//! Per-instance objectives and their gradients with respect to the scores.

use crate::error::{ProbeError, Result};
use crate::model::Objective;
use crate::standardize::Standardizer;

/// Loss of one instance's scores and `dL/ds`.
///
/// Regression compares scores to standardized targets with a mean squared
/// error. Both cross-entropies apply a softmax over the instance's scores;
/// the hard target is the first maximal delta, the soft target is
/// `softmax(deltas / temperature)`.
pub fn compute_loss(
    objective: Objective,
    scores: &[f64],
    deltas_pct: &[f64],
    standardizer: Option<&Standardizer>,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    let m = scores.len();
    if m == 0 || deltas_pct.len() != m {
        return Err(ProbeError::Invalid(format!("{m} scores for {} deltas", deltas_pct.len())));
    }
    match objective {
        Objective::Regression => {
            let st = standardizer
                .filter(|s| s.has_target())
                .ok_or_else(|| ProbeError::Invalid("regression needs a target standardizer".into()))?;
            let mut loss = 0.0;
            let mut grad = Vec::with_capacity(m);
            for (s, d) in scores.iter().zip(deltas_pct) {
                let r = s - st.standardize_target(*d);
                loss += r * r;
                grad.push(2.0 * r / m as f64);
            }
            Ok((loss / m as f64, grad))
        }
        Objective::HardCe => {
            let label = argmax_first(deltas_pct);
            let mut target = vec![0.0; m];
            target[label] = 1.0;
            Ok(cross_entropy(scores, &target))
        }
        Objective::SoftCe => {
            if !(temperature > 0.0) {
                return Err(ProbeError::Config(format!("temperature must be positive, got {temperature}")));
            }
            let scaled: Vec<f64> = deltas_pct.iter().map(|d| d / temperature).collect();
            Ok(cross_entropy(scores, &softmax(&scaled)))
        }
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(x);
    x.iter().map(|v| (v - lse).exp()).collect()
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Index of the largest value, ties to the lowest index.
pub fn argmax_first(x: &[f64]) -> usize {
    (0..x.len()).fold(0, |best, i| if x[i] > x[best] { i } else { best })
}

fn cross_entropy(scores: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let lse = log_sum_exp(scores);
    let loss = -target.iter().zip(scores).map(|(p, s)| if *p > 0.0 { p * (s - lse) } else { 0.0 }).sum::<f64>();
    let grad = scores.iter().zip(target).map(|(s, p)| (s - lse).exp() - p).collect();
    (loss, grad)
}
