//! Ranking metrics, ensembles and evaluation reports.
//!
//! The target set of an instance is every candidate whose delta is within
//! `1e-9` of the maximum; a top-k prediction hits if it contains any of them.
//! Predicted top-k takes the k highest scores, ties to the lowest index.

use crate::baselines::{CandidateScores, ScoreSet};
use crate::error::{Error, Result};
use crate::labeling::{LabelSet, SensitivityLabels};
use crate::Task;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

pub const TARGET_TIE_TOL: f64 = 1e-9;

/// Candidate indices sorted by descending score, ties to the lowest index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

pub fn target_set(deltas: &[f64]) -> Vec<usize> {
    let max = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..deltas.len()).filter(|&i| deltas[i] >= max - TARGET_TIE_TOL).collect()
}

pub fn topk_hit(scores: &[f64], deltas: &[f64], k: usize) -> Result<bool> {
    let m = check_aligned(scores, deltas)?;
    if k == 0 || k > m {
        return Err(Error::Invalid(format!("k = {k} must lie in 1..={m}")));
    }
    let targets = target_set(deltas);
    Ok(ranking(scores)[..k].iter().any(|i| targets.contains(i)))
}

fn check_aligned(scores: &[f64], deltas: &[f64]) -> Result<usize> {
    if scores.len() != deltas.len() {
        return Err(Error::Alignment(format!("{} scores for {} candidates", scores.len(), deltas.len())));
    }
    if scores.is_empty() {
        return Err(Error::Invalid("no candidates".into()));
    }
    Ok(scores.len())
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub rho: f64,
    /// Set when either vector is constant; `rho` is then reported as 0.
    pub undefined: bool,
}

/// Pearson correlation of fractional ranks. Without ties this is
/// `1 - 6 sum d_i^2 / (m (m^2 - 1))`.
pub fn spearman_rho(scores: &[f64], deltas: &[f64]) -> Result<Spearman> {
    let m = check_aligned(scores, deltas)?;
    if m < 2 {
        return Err(Error::Invalid("Spearman needs at least two candidates".into()));
    }
    let (ra, rb) = (fractional_ranks(scores), fractional_ranks(deltas));
    let mean = (m as f64 + 1.0) / 2.0;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (a, b) in ra.iter().zip(&rb) {
        cov += (a - mean) * (b - mean);
        va += (a - mean).powi(2);
        vb += (b - mean).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(Spearman { rho: 0.0, undefined: true });
    }
    Ok(Spearman {
        rho: (cov / (va * vb).sqrt()).clamp(-1.0, 1.0),
        undefined: false,
    })
}

/// Standardizes within the vector (population std); constant vectors map to zeros.
pub fn zscore(values: &[f64]) -> Vec<f64> {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    let std = var.sqrt();
    let scale = values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if !(std > 1e-12 * scale) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    Zscore,
    Raw,
}

impl FromStr for EnsembleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zscore" => Ok(EnsembleMode::Zscore),
            "raw" => Ok(EnsembleMode::Raw),
            _ => Err(Error::Invalid(format!("unknown ensemble mode '{s}' (expected zscore|raw)"))),
        }
    }
}

impl std::fmt::Display for EnsembleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnsembleMode::Zscore => "zscore",
            EnsembleMode::Raw => "raw",
        })
    }
}

/// `0, 0.1, ..., 1.0`
pub fn alpha_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub method_a: String,
    pub method_b: String,
    pub mode: EnsembleMode,
    pub alpha: f64,
}

impl EnsembleSpec {
    pub fn method_name(&self) -> String {
        format!("ensemble.{}+{}", self.method_a, self.method_b)
    }
}

fn mix(mode: EnsembleMode, alpha: f64, a: &[f64], b: &[f64]) -> Vec<f64> {
    let (a, b) = match mode {
        EnsembleMode::Zscore => (zscore(a), zscore(b)),
        EnsembleMode::Raw => (a.to_vec(), b.to_vec()),
    };
    a.iter().zip(&b).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect()
}

/// `alpha * a + (1 - alpha) * b`, on per-instance z-scores or raw scores.
pub fn ensemble_scores(spec: &EnsembleSpec, a: &CandidateScores, b: &CandidateScores) -> Result<CandidateScores> {
    if !(0.0..=1.0).contains(&spec.alpha) {
        return Err(Error::Invalid(format!("alpha {} outside [0,1]", spec.alpha)));
    }
    if a.instance_id != b.instance_id || a.task != b.task || a.scores.len() != b.scores.len() {
        return Err(Error::Alignment(format!(
            "cannot ensemble {} ({} candidates) with {} ({} candidates)",
            a.instance_id,
            a.scores.len(),
            b.instance_id,
            b.scores.len()
        )));
    }
    CandidateScores::new(a.instance_id.clone(), a.task, spec.method_name(), mix(spec.mode, spec.alpha, &a.scores, &b.scores))
}

/// One validation instance: its labels and the two score vectors to mix.
pub type AlphaCase<'a> = (&'a SensitivityLabels, &'a CandidateScores, &'a CandidateScores);

/// Grid value maximizing mean validation top-1; ties go to the smaller alpha.
pub fn select_alpha(mode: EnsembleMode, grid: &[f64], val: &[AlphaCase<'_>]) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::Invalid("alpha selection needs at least one validation instance".into()));
    }
    if grid.is_empty() {
        return Err(Error::Invalid("empty alpha grid".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &alpha in &grid {
        let mut hits = 0usize;
        for (labels, a, b) in val {
            if a.scores.len() != labels.n() || b.scores.len() != labels.n() {
                return Err(Error::Alignment(format!("score/label length mismatch for '{}'", labels.instance_id)));
            }
            hits += topk_hit(&mix(mode, alpha, &a.scores, &b.scores), &labels.deltas_pct, 1)? as usize;
        }
        let acc = hits as f64 / val.len() as f64;
        if acc > best.0 {
            best = (acc, alpha);
        }
    }
    Ok(best.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub instance_id: String,
    pub m: usize,
    pub top1: bool,
    pub top5: bool,
    pub rho: f64,
    pub rho_undefined: bool,
    /// Size of the target set (more than one means tied best candidates).
    pub best_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub method: String,
    pub task: Task,
    pub instances: usize,
    pub top1: f64,
    pub top5: f64,
    pub rho: f64,
    pub chance_top1: f64,
    pub chance_top5: f64,
    pub tied_best_instances: usize,
    pub undefined_rho_instances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub records: Vec<InstanceMetrics>,
}

pub fn instance_metrics(scores: &[f64], labels: &SensitivityLabels) -> Result<InstanceMetrics> {
    let deltas = &labels.deltas_pct;
    let m = check_aligned(scores, deltas)
        .map_err(|e| Error::Alignment(format!("instance '{}': {e}", labels.instance_id)))?;
    let sp = spearman_rho(scores, deltas)?;
    Ok(InstanceMetrics {
        instance_id: labels.instance_id.clone(),
        m,
        top1: topk_hit(scores, deltas, 1)?,
        top5: topk_hit(scores, deltas, 5.min(m))?,
        rho: sp.rho,
        rho_undefined: sp.undefined,
        best_count: target_set(deltas).len(),
    })
}

/// Aggregates per-instance metrics. Top-5 uses `min(5, m)`; chance levels are
/// the per-instance averages of `min(k, m) / m`.
pub fn evaluate_pairs(method: &str, task: Task, pairs: &[(&CandidateScores, &SensitivityLabels)]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Invalid("nothing to evaluate".into()));
    }
    let records = pairs
        .iter()
        .map(|(s, l)| instance_metrics(&s.scores, l))
        .collect::<Result<Vec<_>>>()?;
    let k = records.len() as f64;
    let mean = |f: &dyn Fn(&InstanceMetrics) -> f64| records.iter().map(f).sum::<f64>() / k;
    let summary = EvalSummary {
        method: method.to_string(),
        task,
        instances: records.len(),
        top1: mean(&|r| r.top1 as u8 as f64),
        top5: mean(&|r| r.top5 as u8 as f64),
        rho: mean(&|r| r.rho),
        chance_top1: mean(&|r| 1.0 / r.m as f64),
        chance_top5: mean(&|r| 5.min(r.m) as f64 / r.m as f64),
        tied_best_instances: records.iter().filter(|r| r.best_count > 1).count(),
        undefined_rho_instances: records.iter().filter(|r| r.rho_undefined).count(),
    };
    Ok(EvalReport { summary, records })
}

/// Evaluates a score file against a label file.
///
/// Both files must come from the same dataset (header checksums) and task.
/// With a split filter only those ids are evaluated, otherwise every scored
/// instance; any of them lacking labels or scores is an error listing the ids.
pub fn evaluate_method(scores: &ScoreSet, labels: &LabelSet, split: Option<&HashSet<String>>) -> Result<EvalReport> {
    if scores.header.dataset_checksum != labels.header.dataset_checksum {
        return Err(Error::Checksum(format!(
            "scores for '{}' were computed on dataset {}, labels on {}",
            scores.method(),
            scores.header.dataset_checksum,
            labels.header.dataset_checksum
        )));
    }
    if scores.task() != labels.task() {
        return Err(Error::Invalid(format!("scores are for task {}, labels for {}", scores.task(), labels.task())));
    }
    let ids: Vec<&str> = match split {
        Some(filter) => {
            let mut ids: Vec<&str> = filter.iter().map(String::as_str).collect();
            // evaluate in label-file order for stable reports
            let order: std::collections::HashMap<&str, usize> =
                labels.records.iter().enumerate().map(|(i, r)| (r.instance_id.as_str(), i)).collect();
            ids.sort_by_key(|id| (order.get(id).copied().unwrap_or(usize::MAX), id.to_string()));
            ids
        }
        None => scores.records.iter().map(|r| r.instance_id.as_str()).collect(),
    };
    let mut missing = Vec::new();
    let mut pairs = Vec::with_capacity(ids.len());
    for id in ids {
        match (scores.get(id), labels.get(id)) {
            (Some(s), Some(l)) => pairs.push((s, l)),
            _ => missing.push(id.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Alignment(format!("coverage gaps for {} instance(s): {}", missing.len(), missing.join(", "))));
    }
    evaluate_pairs(scores.method(), labels.task(), &pairs)
}

impl EvalReport {
    /// Aggregate block followed by the per-instance table.
    pub fn table(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        let _ = writeln!(out, "method   {}", s.method);
        let _ = writeln!(out, "task     {}", s.task);
        let _ = writeln!(out, "instances {}", s.instances);
        let _ = writeln!(out, "top-1    {:.4}  (chance {:.4})", s.top1, s.chance_top1);
        let _ = writeln!(out, "top-5    {:.4}  (chance {:.4})", s.top5, s.chance_top5);
        let _ = writeln!(out, "spearman {:.4}", s.rho);
        let _ = writeln!(out, "tied-best instances {}, undefined rho {}", s.tied_best_instances, s.undefined_rho_instances);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<24} {:>4} {:>5} {:>5} {:>8}", "instance", "m", "top1", "top5", "rho");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{:<24} {:>4} {:>5} {:>5} {:>8.4}{}",
                r.instance_id,
                r.m,
                r.top1 as u8,
                r.top5 as u8,
                r.rho,
                if r.rho_undefined { " *" } else { "" }
            );
        }
        out
    }

    /// One JSON line per instance.
    pub fn records_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("metrics serialize") + "\n")
            .collect()
    }
}

/// Side-by-side aggregate table for several methods.
pub fn comparison_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.summary.method.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>8}  {:>5}", "method", "top-1", "top-5", "spearman", "n");
    for r in reports {
        let s = &r.summary;
        let _ = writeln!(out, "{:<width$}  {:>6.3}  {:>6.3}  {:>8.3}  {:>5}", s.method, s.top1, s.top5, s.rho, s.instances);
    }
    if let Some(r) = reports.first() {
        let _ = writeln!(out, "{:<width$}  {:>6.3}  {:>6.3}", "chance", r.summary.chance_top1, r.summary.chance_top5);
    }
    out
}
