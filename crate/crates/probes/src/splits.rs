use crate::error::{ProbeError, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

/// Instance-level train/validation/test partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id) {
                return Err(ProbeError::Split(format!("instance '{id}' appears more than once")));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            _ => Err(ProbeError::Split(format!("unknown split '{name}' (expected train|val|test)"))),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let spec: SplitSpec = serde_json::from_slice(&std::fs::read(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Shuffles `ids` with `seed`, then cuts train and validation blocks of
/// `round(ratio * n)` ids; the test split takes the remainder.
pub fn make_splits(ids: &[String], ratios: [f64; 3], seed: u64) -> Result<SplitSpec> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(ProbeError::Split(format!("ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let unique: HashSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(ProbeError::Split("dataset contains duplicate ids".into()));
    }
    let n = ids.len();
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train.min(n));
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(ProbeError::Split(format!(
            "ratios {ratios:?} over {n} instances leave an empty split"
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    Ok(SplitSpec { train: shuffled, val, test })
}
