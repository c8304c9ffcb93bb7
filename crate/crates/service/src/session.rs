//! Session state and the computations behind each endpoint. Nothing here is
//! async; handlers run these on the blocking pool.

use crate::error::{Result, ServiceError};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;
use std::time::Instant;
use tspsense::baselines::{build_geometry_features, Baseline};
use tspsense::representations::{build_candidate_features_subset, ActivationCache};
use tspsense::solver::{solve_exact, solve_heuristic, tour_edges, Tour, MAX_EXACT_NODES};
use tspsense::{Instance, SolveConstraints, Task};
use tspsense_probes::TrainedProbe;

/// Seed for heuristic solves, fixed so repeated solves agree.
const HEURISTIC_SEED: u64 = 0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum Action {
    Remove { node: usize },
    Forbid { edge: [usize; 2] },
}

#[derive(Clone, Debug)]
pub struct Solved {
    pub tour: Tour,
    pub seconds: f64,
}

/// First-in first-out cache of solves keyed by constraint state.
#[derive(Debug)]
pub struct SolveCache {
    capacity: usize,
    entries: HashMap<SolveConstraints, Solved>,
    order: VecDeque<SolveConstraints>,
}

impl SolveCache {
    pub fn new(capacity: usize) -> Self {
        SolveCache { capacity, entries: HashMap::new(), order: VecDeque::new() }
    }

    pub fn get(&self, key: &SolveConstraints) -> Option<Solved> {
        self.entries.get(key).cloned()
    }

    pub fn insert(&mut self, key: SolveConstraints, value: Solved) {
        if self.capacity == 0 || self.entries.contains_key(&key) {
            return;
        }
        if self.entries.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.entries.remove(&old);
            }
        }
        self.order.push_back(key.clone());
        self.entries.insert(key, value);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Solves `cons` on `inst`, exactly unless the session is heuristic.
/// Returns the result and whether it came from the cache.
pub fn solve_cached(cache: &Mutex<SolveCache>, inst: &Instance, cons: &SolveConstraints, heuristic: bool) -> Result<(Solved, bool)> {
    if let Some(hit) = cache.lock().expect("solve cache").get(cons) {
        return Ok((hit, true));
    }
    let start = Instant::now();
    let tour = if heuristic { solve_heuristic(inst, cons, HEURISTIC_SEED)? } else { solve_exact(inst, cons)? };
    let solved = Solved { tour, seconds: start.elapsed().as_secs_f64() };
    cache.lock().expect("solve cache").insert(cons.clone(), solved.clone());
    Ok((solved, false))
}

#[derive(Clone, Debug)]
pub struct SessionState {
    pub constraints: SolveConstraints,
    pub tour: Tour,
}

#[derive(Clone, Debug, Serialize)]
pub struct ActionRecord {
    pub step: usize,
    #[serde(flatten)]
    pub action: Action,
    pub applied_at: String,
    pub length: f64,
    pub delta_pct_vs_previous: f64,
}

#[derive(Clone, Debug)]
pub struct Session {
    pub id: String,
    pub instance: Instance,
    /// True when solves use the heuristic (instances above the exact limit).
    pub heuristic: bool,
    /// `states[0]` is the base state; one more entry per applied action.
    pub states: Vec<SessionState>,
    pub actions: Vec<ActionRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TourView {
    pub tour: Vec<usize>,
    pub length: f64,
    pub exact: bool,
}

impl From<&Tour> for TourView {
    fn from(t: &Tour) -> Self {
        TourView { tour: t.order.clone(), length: t.length, exact: t.exact }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ApplyResponse {
    pub step: usize,
    #[serde(flatten)]
    pub action: Action,
    pub tour: Vec<usize>,
    pub length: f64,
    pub exact: bool,
    pub previous_length: f64,
    pub delta_pct_vs_previous: f64,
    pub base_length: f64,
    pub delta_pct_vs_base: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct UndoResponse {
    pub step: usize,
    pub undone: Action,
    pub tour: Vec<usize>,
    pub length: f64,
    pub exact: bool,
    pub cache_hit: bool,
}

fn pct(from: f64, to: f64) -> f64 {
    100.0 * (to - from) / from
}

impl Session {
    /// Solves the base state. Instances with more than [`MAX_EXACT_NODES`]
    /// nodes must be heuristic.
    pub fn create(id: String, instance: Instance, heuristic: bool, cache: &Mutex<SolveCache>) -> Result<Self> {
        let cons = SolveConstraints::new();
        let (solved, _) = solve_cached(cache, &instance, &cons, heuristic)?;
        Ok(Session { id, instance, heuristic, states: vec![SessionState { constraints: cons, tour: solved.tour }], actions: Vec::new() })
    }

    pub fn base(&self) -> &SessionState {
        &self.states[0]
    }

    pub fn current(&self) -> &SessionState {
        self.states.last().expect("base state")
    }

    fn next_constraints(&self, action: &Action) -> Result<SolveConstraints> {
        let n = self.instance.n();
        let cur = &self.current().constraints;
        let active = n - cur.removed().len();
        match *action {
            Action::Remove { node } => {
                if node >= n {
                    return Err(ServiceError::Unprocessable(format!("node {node} is out of range for n = {n}")));
                }
                if cur.is_removed(node) {
                    return Err(ServiceError::Conflict(format!("node {node} is already removed")));
                }
                if active < 4 {
                    return Err(ServiceError::Unprocessable(format!(
                        "only {active} nodes are active; removing another would leave fewer than 3"
                    )));
                }
                if cur.forbidden().iter().any(|&(u, v)| u == node || v == node) {
                    return Err(ServiceError::Conflict(format!("node {node} is an endpoint of a forbidden edge")));
                }
                Ok(cur.clone().removing(node))
            }
            Action::Forbid { edge: [u, v] } => {
                if u >= n || v >= n || u == v {
                    return Err(ServiceError::Unprocessable(format!("({u},{v}) is not an edge of the instance")));
                }
                if cur.is_removed(u) || cur.is_removed(v) {
                    return Err(ServiceError::Conflict(format!("edge ({u},{v}) touches a removed node")));
                }
                if cur.is_forbidden(u, v) {
                    return Err(ServiceError::Conflict(format!("edge ({u},{v}) is already forbidden")));
                }
                Ok(cur.clone().forbidding(u, v))
            }
        }
    }

    /// Applies `action` on top of the current state and re-solves.
    pub fn apply(&mut self, action: Action, applied_at: String, cache: &Mutex<SolveCache>) -> Result<ApplyResponse> {
        let cons = self.next_constraints(&action)?;
        let (solved, _) = solve_cached(cache, &self.instance, &cons, self.heuristic).map_err(|e| match e {
            ServiceError::Conflict(msg) => ServiceError::Conflict(format!("cannot apply {action:?}: {msg}")),
            other => other,
        })?;
        let previous = self.current().tour.length;
        let base = self.base().tour.length;
        let tour = solved.tour;
        let step = self.actions.len() + 1;
        self.actions.push(ActionRecord {
            step,
            action: action.clone(),
            applied_at,
            length: tour.length,
            delta_pct_vs_previous: pct(previous, tour.length),
        });
        let response = ApplyResponse {
            step,
            action,
            tour: tour.order.clone(),
            length: tour.length,
            exact: tour.exact,
            previous_length: previous,
            delta_pct_vs_previous: pct(previous, tour.length),
            base_length: base,
            delta_pct_vs_base: pct(base, tour.length),
        };
        self.states.push(SessionState { constraints: cons, tour });
        Ok(response)
    }

    /// Drops the last action; the previous state is still held, so nothing is re-solved.
    pub fn undo(&mut self) -> Result<UndoResponse> {
        let record = self.actions.pop().ok_or_else(|| ServiceError::Conflict("no action to undo".into()))?;
        self.states.pop();
        let cur = &self.current().tour;
        Ok(UndoResponse {
            step: self.actions.len(),
            undone: record.action,
            tour: cur.order.clone(),
            length: cur.length,
            exact: cur.exact,
            cache_hit: true,
        })
    }

    /// Active nodes of the current state, ascending.
    pub fn active(&self) -> Vec<usize> {
        (0..self.instance.n()).filter(|&i| !self.current().constraints.is_removed(i)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum Candidate {
    Node(usize),
    Edge([usize; 2]),
}

#[derive(Clone, Debug, Serialize)]
pub struct SensitivityResponse {
    pub task: &'static str,
    pub method: String,
    pub exact: bool,
    pub length: f64,
    pub candidates: Vec<Candidate>,
    /// Missing for candidates whose re-solve is infeasible.
    pub scores: Vec<Option<f64>>,
    pub infeasible: Vec<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deltas_pct: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve_seconds: Option<Vec<f64>>,
}

pub enum FeatureSource {
    Geometry,
    Activations(ActivationCache),
}

pub struct LoadedProbe {
    pub probe: TrainedProbe,
    pub features: FeatureSource,
}

pub fn task_label(task: Task) -> &'static str {
    match task {
        Task::Removal => "remove",
        Task::Forbid => "forbid",
    }
}

/// The current state viewed as a smaller instance: active nodes re-indexed
/// from 0 and the current tour in those local indices.
struct Reduced {
    instance: Instance,
    tour: Vec<usize>,
}

fn reduce(session: &Session) -> Result<Reduced> {
    let active = session.active();
    if active.len() < tspsense::instances::MIN_NODES {
        return Err(ServiceError::Unprocessable(format!(
            "scorers need at least {} active nodes, {} remain",
            tspsense::instances::MIN_NODES,
            active.len()
        )));
    }
    let mut local = vec![usize::MAX; session.instance.n()];
    for (k, &i) in active.iter().enumerate() {
        local[i] = k;
    }
    let instance = session.instance.subset(&active, session.instance.id())?;
    let tour = session.current().tour.order.iter().map(|&i| local[i]).collect();
    Ok(Reduced { instance, tour })
}

/// Scores every candidate of the current state with `method`.
///
/// Candidates are the active nodes (ascending) for removal and the current
/// tour's edges (in tour order) for forbid. `exact` re-solves once per
/// candidate; the scorers run on the reduced instance and ignore forbidden
/// edges other than through the current tour.
pub fn sensitivity(
    session: &Session,
    task: Task,
    method: &str,
    probes: &HashMap<String, LoadedProbe>,
    cache: &Mutex<SolveCache>,
) -> Result<SensitivityResponse> {
    let cur = session.current();
    let candidates: Vec<Candidate> = match task {
        Task::Removal => session.active().into_iter().map(Candidate::Node).collect(),
        Task::Forbid => tour_edges(&cur.tour.order).into_iter().map(|(u, v)| Candidate::Edge([u, v])).collect(),
    };
    let base = cur.tour.length;
    let mut out = SensitivityResponse {
        task: task_label(task),
        method: method.to_string(),
        exact: false,
        length: base,
        candidates: candidates.clone(),
        scores: Vec::new(),
        infeasible: vec![false; candidates.len()],
        deltas_pct: None,
        solve_seconds: None,
    };

    if method == "exact" {
        let mut deltas = Vec::with_capacity(candidates.len());
        let mut seconds = Vec::with_capacity(candidates.len());
        for (k, c) in candidates.iter().enumerate() {
            let cons = match *c {
                Candidate::Node(i) => cur.constraints.clone().removing(i),
                Candidate::Edge([u, v]) => cur.constraints.clone().forbidding(u, v),
            };
            let feasible = cons.active_nodes(session.instance.n()).is_ok();
            let solved = if feasible {
                match solve_cached(cache, &session.instance, &cons, session.heuristic) {
                    Ok((s, _)) => Some(s),
                    Err(ServiceError::Conflict(_)) => None,
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            match solved {
                Some(s) => {
                    let d = match task {
                        Task::Removal => 100.0 * (base - s.tour.length) / base,
                        Task::Forbid => 100.0 * (s.tour.length - base) / base,
                    };
                    deltas.push(Some(d));
                    seconds.push(s.seconds);
                }
                None => {
                    out.infeasible[k] = true;
                    deltas.push(None);
                    seconds.push(0.0);
                }
            }
        }
        out.exact = !session.heuristic;
        out.scores = deltas.clone();
        out.deltas_pct = Some(deltas);
        out.solve_seconds = Some(seconds);
        return Ok(out);
    }

    if let Some(name) = method.strip_prefix("probe.") {
        let loaded = probes
            .get(name)
            .ok_or_else(|| ServiceError::Conflict(format!("no probe named '{name}' is loaded")))?;
        if loaded.probe.task != task {
            return Err(ServiceError::Conflict(format!("probe '{name}' was trained for task {}", task_label(loaded.probe.task))));
        }
        let reduced = reduce(session)?;
        let features = match &loaded.features {
            FeatureSource::Geometry => build_geometry_features(&reduced.instance, task, Some(&reduced.tour))?,
            FeatureSource::Activations(acts) => {
                if acts.block(session.instance.id()).is_none() {
                    return Err(ServiceError::Conflict(format!(
                        "probe '{name}' has no activations for instance '{}'",
                        session.instance.id()
                    )));
                }
                let tour = &reduced.tour;
                build_candidate_features_subset(acts, session.instance.id(), &session.active(), task, Some(tour))?
            }
        };
        let scores = loaded.probe.score(&features)?;
        out.scores = scores.into_iter().map(Some).collect();
        return Ok(out);
    }

    let baseline: Baseline = method
        .parse()
        .map_err(|_| ServiceError::Unprocessable(format!("unknown method '{method}' (expected exact|nn|splice|detour|2opt|probe.<name>)")))?;
    if baseline.task() != task {
        return Err(ServiceError::Unprocessable(format!("method '{method}' scores the {} task", task_label(baseline.task()))));
    }
    let reduced = reduce(session)?;
    let scores = baseline.score(&reduced.instance, Some(&reduced.tour))?;
    out.scores = scores.scores.into_iter().map(Some).collect();
    Ok(out)
}

/// Largest instance accepted for exact sessions, whatever the configured cap.
pub const HARD_EXACT_LIMIT: usize = MAX_EXACT_NODES;
