//! Ground-truth sensitivity labels by repeated exact re-solves.
//!
//! Node removal: `delta_pct[i] = 100 (L* - L*(without i)) / L*`.
//! Edge forbid: for tour position `t` of the canonical base tour,
//! `delta_pct[t] = 100 (L*(forbid e_t) - L*) / L*` with
//! `e_t = (tour[t], tour[t+1])`, wrapping at the end.
//!
//! Each label costs `1 + n` exact solves; wall-clock time of every solve is
//! stored alongside the deltas (base solve first).

use crate::error::{Error, Result};
use crate::instances::{Instance, ScaledMetric};
use crate::io::{self, FileHeader, LABELS_FORMAT};
use crate::solver::{solve_exact_with, tour_edges, SolveConstraints, MAX_EXACT_NODES};
use crate::Task;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

/// Largest instance that can be labeled exactly (the base solve uses all nodes).
pub const MAX_LABEL_NODES: usize = MAX_EXACT_NODES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityLabels {
    pub instance_id: String,
    pub task: Task,
    pub base_length: f64,
    pub base_tour: Vec<usize>,
    pub deltas_pct: Vec<f64>,
    pub solve_seconds: Vec<f64>,
}

impl SensitivityLabels {
    pub fn n(&self) -> usize {
        self.deltas_pct.len()
    }

    /// Forbid candidates in label order; empty for the removal task.
    pub fn candidate_edges(&self) -> Vec<(usize, usize)> {
        match self.task {
            Task::Forbid => tour_edges(&self.base_tour),
            Task::Removal => Vec::new(),
        }
    }

    pub fn absolute_deltas(&self) -> Vec<f64> {
        self.deltas_pct.iter().map(|p| p * self.base_length / 100.0).collect()
    }

    pub fn total_seconds(&self) -> f64 {
        self.solve_seconds.iter().sum()
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

fn check_cap(n: usize) -> Result<()> {
    if n > MAX_LABEL_NODES {
        return Err(Error::SizeLimit { got: n, max: MAX_LABEL_NODES });
    }
    Ok(())
}

pub fn label_node_removal(inst: &Instance) -> Result<SensitivityLabels> {
    label_node_removal_with(&ScaledMetric::new(inst), inst.id())
}

pub fn label_node_removal_with(metric: &ScaledMetric, instance_id: &str) -> Result<SensitivityLabels> {
    let n = metric.n();
    check_cap(n)?;
    let (base, secs) = timed(|| solve_exact_with(metric, &SolveConstraints::new()));
    let base = base?;
    let mut solve_seconds = vec![secs];
    let mut deltas_pct = Vec::with_capacity(n);
    for i in 0..n {
        let (tour, secs) = timed(|| solve_exact_with(metric, &SolveConstraints::new().removing(i)));
        let tour = tour.map_err(|e| Error::Candidate { candidate: i, source: Box::new(e) })?;
        solve_seconds.push(secs);
        deltas_pct.push(100.0 * (base.length - tour.length) / base.length);
    }
    Ok(SensitivityLabels {
        instance_id: instance_id.to_string(),
        task: Task::Removal,
        base_length: base.length,
        base_tour: base.order,
        deltas_pct,
        solve_seconds,
    })
}

pub fn label_edge_forbid(inst: &Instance) -> Result<SensitivityLabels> {
    label_edge_forbid_with(&ScaledMetric::new(inst), inst.id())
}

pub fn label_edge_forbid_with(metric: &ScaledMetric, instance_id: &str) -> Result<SensitivityLabels> {
    check_cap(metric.n())?;
    let (base, secs) = timed(|| solve_exact_with(metric, &SolveConstraints::new()));
    let base = base?;
    let mut solve_seconds = vec![secs];
    let edges = tour_edges(&base.order);
    let mut deltas_pct = Vec::with_capacity(edges.len());
    for (t, &(u, v)) in edges.iter().enumerate() {
        let (tour, secs) = timed(|| solve_exact_with(metric, &SolveConstraints::new().forbidding(u, v)));
        let tour = tour.map_err(|e| Error::Candidate { candidate: t, source: Box::new(e) })?;
        solve_seconds.push(secs);
        deltas_pct.push(100.0 * (tour.length - base.length) / base.length);
    }
    Ok(SensitivityLabels {
        instance_id: instance_id.to_string(),
        task: Task::Forbid,
        base_length: base.length,
        base_tour: base.order,
        deltas_pct,
        solve_seconds,
    })
}

pub fn label_instance(inst: &Instance, task: Task) -> Result<SensitivityLabels> {
    match task {
        Task::Removal => label_node_removal(inst),
        Task::Forbid => label_edge_forbid(inst),
    }
}

/// Runs `f` over `items` on `workers` threads and hands results to `sink` in
/// input order, from the calling thread only.
pub fn parallel_ordered<T, R, F, S>(items: &[T], workers: usize, f: F, mut sink: S) -> Result<()>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
    S: FnMut(usize, R) -> Result<()>,
{
    let workers = workers.max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, R)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, f) = (&next, &f);
            scope.spawn(move || loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= items.len() {
                    break;
                }
                if tx.send((idx, f(&items[idx]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut expected = 0;
        for (idx, r) in rx {
            pending.insert(idx, r);
            while let Some(r) = pending.remove(&expected) {
                if let Err(e) = sink(expected, r) {
                    // stop handing out work; workers exit once the receiver is gone
                    next.store(items.len(), Ordering::Relaxed);
                    return Err(e);
                }
                expected += 1;
            }
        }
        Ok(())
    })
}

/// Labels every instance in memory. Results are in input order.
pub fn label_all(dataset: &[Instance], task: Task, workers: usize) -> Vec<Result<SensitivityLabels>> {
    let mut out = Vec::with_capacity(dataset.len());
    parallel_ordered(dataset, workers, |inst| label_instance(inst, task), |_, r| {
        out.push(r);
        Ok(())
    })
    .expect("in-memory sink never fails");
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelFailure {
    pub instance_id: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub task: Task,
    pub total: usize,
    pub labeled: usize,
    pub skipped: usize,
    pub failures: Vec<LabelFailure>,
    /// Mean and median of per-instance solve time over newly labeled instances.
    pub mean_seconds: f64,
    pub median_seconds: f64,
    pub solves: usize,
}

impl LabelSummary {
    pub fn all_ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Labels a dataset into a headed record file, appending in input order.
///
/// With `resume`, an existing output for the same task and dataset is kept and
/// instances already present are skipped by id; otherwise the file is
/// rewritten. Per-instance failures are collected, not fatal.
pub fn label_dataset(
    dataset: &[Instance],
    task: Task,
    workers: usize,
    out: &Path,
    resume: bool,
) -> Result<LabelSummary> {
    let checksum = io::dataset_checksum(dataset);
    let header = FileHeader::labels(task, checksum);
    let mut done: HashSet<String> = HashSet::new();

    if resume && out.exists() {
        let (existing, records, torn) = io::read_with_header::<SensitivityLabels>(out, LABELS_FORMAT, true)?;
        if existing.task != task || existing.dataset_checksum != header.dataset_checksum {
            return Err(Error::Checksum(format!(
                "{} was produced for task {} / dataset {}, not task {} / dataset {}",
                out.display(),
                existing.task,
                existing.dataset_checksum,
                task,
                header.dataset_checksum
            )));
        }
        if let Some(offset) = torn {
            log::warn!("dropping torn final record in {}", out.display());
            OpenOptions::new().write(true).open(out)?.set_len(offset)?;
        }
        done.extend(records.into_iter().map(|r| r.instance_id));
    } else {
        io::write_with_header::<SensitivityLabels>(out, &header, &[])?;
    }

    let pending: Vec<&Instance> = dataset.iter().filter(|i| !done.contains(i.id())).collect();
    let skipped = dataset.len() - pending.len();
    let mut file = OpenOptions::new().append(true).open(out)?;
    let mut failures = Vec::new();
    let mut seconds = Vec::new();
    let mut solves = 0;

    parallel_ordered(&pending, workers, |inst| label_instance(inst, task), |idx, r| {
        match r {
            Ok(labels) => {
                solves += labels.solve_seconds.len();
                seconds.push(labels.total_seconds());
                let mut line = serde_json::to_vec(&labels)?;
                line.push(b'\n');
                file.write_all(&line)?;
                file.flush()?;
            }
            Err(e) => failures.push(LabelFailure {
                instance_id: pending[idx].id().to_string(),
                error: e.to_string(),
            }),
        }
        Ok(())
    })?;

    let labeled = seconds.len();
    let mean_seconds = if labeled > 0 { seconds.iter().sum::<f64>() / labeled as f64 } else { 0.0 };
    Ok(LabelSummary {
        task,
        total: dataset.len(),
        labeled,
        skipped,
        failures,
        mean_seconds,
        median_seconds: median(&mut seconds),
        solves,
    })
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// A label file loaded into memory, indexed by instance id.
#[derive(Clone, Debug)]
pub struct LabelSet {
    pub header: FileHeader,
    pub records: Vec<SensitivityLabels>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn new(header: FileHeader, records: Vec<SensitivityLabels>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.task != header.task {
                return Err(Error::Format(format!("record '{}' has task {}, file says {}", r.instance_id, r.task, header.task)));
            }
            if index.insert(r.instance_id.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate label record '{}'", r.instance_id)));
            }
        }
        Ok(LabelSet { header, records, index })
    }

    pub fn from_labels(task: Task, dataset_checksum: &str, records: Vec<SensitivityLabels>) -> Result<Self> {
        Self::new(FileHeader::labels(task, dataset_checksum), records)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (header, records, _) = io::read_with_header(path, LABELS_FORMAT, false)?;
        Self::new(header, records)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_with_header(path, &self.header, &self.records)
    }

    pub fn task(&self) -> Task {
        self.header.task
    }

    pub fn get(&self, instance_id: &str) -> Option<&SensitivityLabels> {
        self.index.get(instance_id).map(|&i| &self.records[i])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{generate_instance, make_instance};
    use crate::solver::{solve_brute_force_structural, solve_exact};

    fn square() -> Instance {
        make_instance(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], "square").unwrap()
    }

    #[test]
    fn square_removal_labels() {
        let l = label_node_removal(&square()).unwrap();
        assert_eq!(l.base_length, 400.0);
        assert_eq!(l.solve_seconds.len(), 5);
        let expected = 100.0 * (400.0 - (200.0 + 100.0 * 2f64.sqrt())) / 400.0;
        for d in &l.deltas_pct {
            assert!((d - expected).abs() < 1e-9);
            assert!((d - 14.6447).abs() < 1e-4);
        }
    }

    #[test]
    fn square_forbid_labels() {
        let l = label_edge_forbid(&square()).unwrap();
        assert_eq!(l.candidate_edges(), vec![(0, 1), (1, 2), (2, 3), (3, 0)]);
        for d in &l.deltas_pct {
            assert!((d - 20.7107).abs() < 1e-4);
        }
    }

    #[test]
    fn collinear_interior_node_has_zero_delta() {
        // node 1 sits on the segment between nodes 0 and 2, which are tour neighbours
        let inst = make_instance(vec![[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [0.5, 1.0]], "line").unwrap();
        let l = label_node_removal(&inst).unwrap();
        assert!(l.deltas_pct[1].abs() < 1e-9, "{:?}", l.deltas_pct);
    }

    #[test]
    fn forbid_then_unforbid_recovers_base() {
        let inst = generate_instance(9, 4).unwrap();
        let base = solve_exact(&inst, &SolveConstraints::new()).unwrap();
        let (u, v) = base.edges()[2];
        let forbidden = solve_exact(&inst, &SolveConstraints::new().forbidding(u, v)).unwrap();
        assert!(forbidden.length >= base.length);
        let again = solve_exact(&inst, &SolveConstraints::new()).unwrap();
        assert_eq!(again.length, base.length);
    }

    #[test]
    fn big_m_matches_structural_exclusion() {
        for seed in 0..10 {
            let inst = generate_instance(8, seed).unwrap();
            let l = label_edge_forbid(&inst).unwrap();
            for (t, (u, v)) in l.candidate_edges().into_iter().enumerate() {
                let s = solve_brute_force_structural(&inst, &SolveConstraints::new().forbidding(u, v)).unwrap();
                let d = 100.0 * (s.length - l.base_length) / l.base_length;
                assert!((d - l.deltas_pct[t]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn size_cap() {
        let inst = generate_instance(19, 0).unwrap();
        assert!(matches!(label_node_removal(&inst), Err(Error::SizeLimit { .. })));
        assert!(matches!(label_edge_forbid(&inst), Err(Error::SizeLimit { .. })));
    }

    #[test]
    fn percent_deltas_do_not_depend_on_scale() {
        for seed in 0..5 {
            let inst = generate_instance(8, seed).unwrap();
            let a = ScaledMetric::with_scale(&inst, 1.0, false);
            let b = ScaledMetric::with_scale(&inst, 100.0, false);
            for task in [Task::Removal, Task::Forbid] {
                let (la, lb) = match task {
                    Task::Removal => (label_node_removal_with(&a, "x").unwrap(), label_node_removal_with(&b, "x").unwrap()),
                    Task::Forbid => (label_edge_forbid_with(&a, "x").unwrap(), label_edge_forbid_with(&b, "x").unwrap()),
                };
                assert!((lb.base_length / la.base_length - 100.0).abs() < 1e-9);
                for (x, y) in la.deltas_pct.iter().zip(&lb.deltas_pct) {
                    assert!((x - y).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn dataset_labeling_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("labels.jsonl");
        let data: Vec<_> = (0..3).map(|s| generate_instance(7, s).unwrap()).collect();
        let summary = label_dataset(&data, Task::Removal, 2, &out, false).unwrap();
        assert_eq!(summary.labeled, 3);
        assert_eq!(summary.solves, 3 * 8);
        let set = LabelSet::read(&out).unwrap();
        let ids: Vec<_> = set.records.iter().map(|r| r.instance_id.as_str()).collect();
        assert_eq!(ids, data.iter().map(|i| i.id()).collect::<Vec<_>>());

        let again = label_dataset(&data, Task::Removal, 2, &out, true).unwrap();
        assert_eq!((again.labeled, again.skipped, again.solves), (0, 3, 0));
        assert_eq!(LabelSet::read(&out).unwrap().len(), 3);

        // resume against a different task is refused
        assert!(label_dataset(&data, Task::Forbid, 1, &out, true).is_err());
    }

    #[test]
    fn dataset_failures_are_collected() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("labels.jsonl");
        let data = vec![generate_instance(6, 0).unwrap(), generate_instance(19, 1).unwrap(), generate_instance(6, 2).unwrap()];
        let summary = label_dataset(&data, Task::Forbid, 3, &out, false).unwrap();
        assert_eq!(summary.labeled, 2);
        assert_eq!(summary.failures.len(), 1);
        assert_eq!(summary.failures[0].instance_id, "n19-s1");
        assert!(!summary.all_ok());
        // the failed instance is picked up again on resume
        let again = label_dataset(&data, Task::Forbid, 1, &out, true).unwrap();
        assert_eq!((again.skipped, again.failures.len()), (2, 1));
    }
}
