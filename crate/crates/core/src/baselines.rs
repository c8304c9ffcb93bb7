//! Heuristic candidate scorers and geometry-only features.
//!
//! Higher scores mean "predicted more sensitive". Units differ per method
//! (splice is in percent of the base length, nearest-neighbour and detour in
//! scaled length units, 2-opt repair in scaled length units); every evaluation
//! is rank based so the units never mix.

use crate::error::{Error, Result};
use crate::features::CandidateFeatures;
use crate::instances::{check_permutation, Instance, ScaledMetric};
use crate::io::{self, FileHeader, SCORES_FORMAT};
use crate::labeling::SensitivityLabels;
use crate::solver::{raw_length, tour_edges};
use crate::Task;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

pub const METHOD_NN: &str = "baseline.nn";
pub const METHOD_SPLICE: &str = "baseline.splice";
pub const METHOD_DETOUR: &str = "baseline.detour";
pub const METHOD_TWO_OPT: &str = "baseline.2opt";
pub const METHOD_ORACLE: &str = "oracle";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScores {
    pub instance_id: String,
    pub task: Task,
    pub method: String,
    pub scores: Vec<f64>,
}

impl CandidateScores {
    pub fn new(instance_id: impl Into<String>, task: Task, method: impl Into<String>, scores: Vec<f64>) -> Result<Self> {
        let method = method.into();
        if let Some(t) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Invalid(format!("{method}: non-finite score for candidate {t}")));
        }
        Ok(CandidateScores {
            instance_id: instance_id.into(),
            task,
            method,
            scores,
        })
    }

    /// Scores equal to the true percent deltas.
    pub fn oracle(labels: &SensitivityLabels) -> Self {
        CandidateScores {
            instance_id: labels.instance_id.clone(),
            task: labels.task,
            method: METHOD_ORACLE.into(),
            scores: labels.deltas_pct.clone(),
        }
    }
}

/// The four heuristic scorers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Baseline {
    NearestNeighbor,
    Splice,
    Detour,
    TwoOptRepair,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::NearestNeighbor, Baseline::Splice, Baseline::Detour, Baseline::TwoOptRepair];

    pub fn method(self) -> &'static str {
        match self {
            Baseline::NearestNeighbor => METHOD_NN,
            Baseline::Splice => METHOD_SPLICE,
            Baseline::Detour => METHOD_DETOUR,
            Baseline::TwoOptRepair => METHOD_TWO_OPT,
        }
    }

    pub fn task(self) -> Task {
        match self {
            Baseline::NearestNeighbor | Baseline::Splice => Task::Removal,
            Baseline::Detour | Baseline::TwoOptRepair => Task::Forbid,
        }
    }

    /// Scores `inst`. Every scorer except nearest-neighbour needs the optimal
    /// base tour (detour needs it only to enumerate the candidate edges).
    pub fn score(self, inst: &Instance, base_tour: Option<&[usize]>) -> Result<CandidateScores> {
        if self == Baseline::NearestNeighbor {
            return Ok(score_nn_distance(inst));
        }
        let tour = base_tour.ok_or_else(|| Error::Invalid(format!("{} needs the base tour", self.method())))?;
        match self {
            Baseline::NearestNeighbor => unreachable!(),
            Baseline::Splice => score_splice(inst, tour),
            Baseline::Detour => score_detour(inst, tour),
            Baseline::TwoOptRepair => score_two_opt_repair(inst, tour),
        }
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.strip_prefix("baseline.").unwrap_or(s);
        match key {
            "nn" => Ok(Baseline::NearestNeighbor),
            "splice" => Ok(Baseline::Splice),
            "detour" => Ok(Baseline::Detour),
            "2opt" | "two_opt" => Ok(Baseline::TwoOptRepair),
            _ => Err(Error::Invalid(format!("unknown baseline '{s}' (expected nn|splice|detour|2opt)"))),
        }
    }
}

fn nn_distances(metric: &ScaledMetric) -> Vec<f64> {
    let n = metric.n();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| metric.d(i, j))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Distance to the nearest other node, in scaled units.
pub fn score_nn_distance(inst: &Instance) -> CandidateScores {
    let scores = nn_distances(&ScaledMetric::new(inst));
    CandidateScores::new(inst.id(), Task::Removal, METHOD_NN, scores).expect("distances are finite")
}

fn check_tour(inst: &Instance, tour: &[usize]) -> Result<()> {
    check_permutation(tour, inst.n()).map_err(|_| Error::InvalidTour(format!("base tour is not a permutation of 0..{}", inst.n())))
}

/// Shortcut gain of splicing each node out of the base tour, in percent of the
/// base tour length. Indexed by node.
pub fn score_splice(inst: &Instance, base_tour: &[usize]) -> Result<CandidateScores> {
    check_tour(inst, base_tour)?;
    let metric = ScaledMetric::new(inst);
    let n = base_tour.len();
    let base = raw_length(&metric, base_tour);
    let mut scores = vec![0.0; n];
    for t in 0..n {
        let (prev, node, next) = (base_tour[(t + n - 1) % n], base_tour[t], base_tour[(t + 1) % n]);
        let gain = metric.d(prev, node) + metric.d(node, next) - metric.d(prev, next);
        scores[node] = if base > 0.0 { 100.0 * gain / base } else { 0.0 };
    }
    CandidateScores::new(inst.id(), Task::Removal, METHOD_SPLICE, scores)
}

/// Cheapest bypass of each tour edge through a third node. Indexed by tour position.
pub fn score_detour(inst: &Instance, base_tour: &[usize]) -> Result<CandidateScores> {
    check_tour(inst, base_tour)?;
    let metric = ScaledMetric::new(inst);
    let n = inst.n();
    let scores = tour_edges(base_tour)
        .into_iter()
        .map(|(u, v)| {
            (0..n)
                .filter(|&w| w != u && w != v)
                .map(|w| metric.d(u, w) + metric.d(w, v) - metric.d(u, v))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    CandidateScores::new(inst.id(), Task::Forbid, METHOD_DETOUR, scores)
}

/// Cheapest tour-length increase of a 2-opt move that removes the edge, clamped
/// at zero. Indexed by tour position.
///
/// For edges `(a_i, b_i)` and `(a_j, b_j)` in tour direction, the only
/// reconnection that keeps a single cycle is `(a_i, a_j), (b_i, b_j)`; the
/// crossed reconnection splits the tour and is not a repair, so it is never
/// considered. The resulting tour avoids the edge, which makes this an upper
/// bound on the exact forbid delta. An edge without a non-adjacent partner
/// (tours of 3 nodes) gets the instance's largest finite score plus one.
pub fn score_two_opt_repair(inst: &Instance, base_tour: &[usize]) -> Result<CandidateScores> {
    check_tour(inst, base_tour)?;
    let metric = ScaledMetric::new(inst);
    let n = base_tour.len();
    let mut scores: Vec<Option<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let (ai, bi) = (base_tour[i], base_tour[(i + 1) % n]);
        let mut best: Option<f64> = None;
        for j in 0..n {
            if j == i || j == (i + 1) % n || (j + 1) % n == i {
                continue;
            }
            let (aj, bj) = (base_tour[j], base_tour[(j + 1) % n]);
            let delta = metric.d(ai, aj) + metric.d(bi, bj) - metric.d(ai, bi) - metric.d(aj, bj);
            best = Some(best.map_or(delta, |b: f64| b.min(delta)));
        }
        scores.push(best.map(|b| b.max(0.0)));
    }
    let sentinel = scores.iter().flatten().fold(0.0f64, |a, &b| a.max(b)) + 1.0;
    let scores = scores.into_iter().map(|s| s.unwrap_or(sentinel)).collect();
    CandidateScores::new(inst.id(), Task::Forbid, METHOD_TWO_OPT, scores)
}

/// Geometry-only candidate features in scaled units.
///
/// Removal: `(x_i, y_i, nn_dist_i)`. Forbid, per tour edge `(u, v)` in tour
/// direction: `(x_u, y_u, x_v, y_v, dx, dy, |dx|, |dy|, |d|)` with `d = v - u`.
pub fn build_geometry_features(inst: &Instance, task: Task, base_tour: Option<&[usize]>) -> Result<CandidateFeatures> {
    let metric = ScaledMetric::new(inst);
    let xy = metric.scaled_coords();
    match task {
        Task::Removal => {
            let nn = nn_distances(&metric);
            let data = xy.iter().zip(&nn).flat_map(|(&[x, y], &d)| [x, y, d]).collect();
            CandidateFeatures::new(task, 3, data)
        }
        Task::Forbid => {
            let tour = base_tour.ok_or_else(|| Error::Invalid("edge geometry features need the base tour".into()))?;
            check_tour(inst, tour)?;
            let data = tour_edges(tour)
                .into_iter()
                .flat_map(|(u, v)| {
                    let ([xu, yu], [xv, yv]) = (xy[u], xy[v]);
                    let (dx, dy) = (xv - xu, yv - yu);
                    [xu, yu, xv, yv, dx, dy, dx.abs(), dy.abs(), metric.d(u, v)]
                })
                .collect();
            CandidateFeatures::new(task, 9, data)
        }
    }
}

/// A scores file in memory, indexed by instance id.
#[derive(Clone, Debug)]
pub struct ScoreSet {
    pub header: FileHeader,
    pub records: Vec<CandidateScores>,
    index: HashMap<String, usize>,
}

impl ScoreSet {
    pub fn new(header: FileHeader, records: Vec<CandidateScores>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.task != header.task {
                return Err(Error::Format(format!("score record '{}' has task {}, file says {}", r.instance_id, r.task, header.task)));
            }
            if index.insert(r.instance_id.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate score record '{}'", r.instance_id)));
            }
        }
        Ok(ScoreSet { header, records, index })
    }

    /// Builds a set from records sharing one task and method.
    pub fn from_scores(dataset_checksum: &str, records: Vec<CandidateScores>) -> Result<Self> {
        let first = records.first().ok_or_else(|| Error::Invalid("empty score set".into()))?;
        let (task, method) = (first.task, first.method.clone());
        if let Some(r) = records.iter().find(|r| r.method != method) {
            return Err(Error::Invalid(format!("mixed methods in one score set: {} and {}", method, r.method)));
        }
        Self::new(FileHeader::scores(task, method, dataset_checksum), records)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (header, records, _) = io::read_with_header(path, SCORES_FORMAT, false)?;
        Self::new(header, records)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_with_header(path, &self.header, &self.records)
    }

    pub fn method(&self) -> &str {
        self.header.method.as_deref().unwrap_or("unknown")
    }

    pub fn task(&self) -> Task {
        self.header.task
    }

    pub fn get(&self, instance_id: &str) -> Option<&CandidateScores> {
        self.index.get(instance_id).map(|&i| &self.records[i])
    }
}
