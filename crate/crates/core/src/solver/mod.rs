//! Optimal and heuristic tours under node removals and forbidden edges.
//!
//! Forbidden edges are not removed from the graph. Their cost is overridden
//! with [`FORBID_COST`] in the cost table handed to the search, exactly like a
//! Big-M distance matrix. A search result whose cost reaches half the penalty
//! used a forbidden edge and is reported as [`Error::Infeasible`].
//!
//! Returned tours are canonical: they start at the lowest active index and
//! continue toward the lower-indexed of its two tour neighbours. Their
//! `length` is always the true geometric length on the scaled metric.

mod brute_force;
mod held_karp;
mod heuristic;

pub use brute_force::{solve_brute_force, solve_brute_force_structural, solve_brute_force_with, ForbidMode};
pub use held_karp::{solve_exact, solve_exact_with};
pub use heuristic::{solve_heuristic, solve_heuristic_with};

use crate::error::{Error, Result};
use crate::instances::{Instance, ScaledMetric};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Cost assigned to a forbidden edge.
pub const FORBID_COST: f64 = 1e7;

/// Largest active node count accepted by the Held–Karp solver.
pub const MAX_EXACT_NODES: usize = 18;

/// Largest active node count accepted by exhaustive enumeration.
pub const MAX_BRUTE_FORCE_NODES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tour {
    pub order: Vec<usize>,
    pub length: f64,
    pub exact: bool,
}

impl Tour {
    /// Tour edges `(order[t], order[t+1])` with wrap-around, in tour order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        tour_edges(&self.order)
    }
}

pub fn tour_edges(order: &[usize]) -> Vec<(usize, usize)> {
    let m = order.len();
    (0..m).map(|t| (order[t], order[(t + 1) % m])).collect()
}

/// Removed nodes and forbidden (unordered) edges. Edges are stored as
/// `(min, max)` pairs so equal constraint sets compare and hash equal.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SolveConstraints {
    removed: BTreeSet<usize>,
    forbidden: BTreeSet<(usize, usize)>,
}

impl SolveConstraints {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn removing(mut self, node: usize) -> Self {
        self.removed.insert(node);
        self
    }

    pub fn forbidding(mut self, u: usize, v: usize) -> Self {
        self.forbidden.insert(edge_key(u, v));
        self
    }

    /// Returns false if the node was already removed.
    pub fn remove_node(&mut self, node: usize) -> bool {
        self.removed.insert(node)
    }

    /// Returns false if the edge was already forbidden.
    pub fn forbid_edge(&mut self, u: usize, v: usize) -> bool {
        self.forbidden.insert(edge_key(u, v))
    }

    pub fn removed(&self) -> &BTreeSet<usize> {
        &self.removed
    }

    pub fn forbidden(&self) -> &BTreeSet<(usize, usize)> {
        &self.forbidden
    }

    pub fn is_removed(&self, node: usize) -> bool {
        self.removed.contains(&node)
    }

    pub fn is_forbidden(&self, u: usize, v: usize) -> bool {
        self.forbidden.contains(&edge_key(u, v))
    }

    /// Checks the constraints against an `n`-node instance and returns the
    /// active nodes in increasing order.
    pub fn active_nodes(&self, n: usize) -> Result<Vec<usize>> {
        if let Some(&bad) = self.removed.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, n });
        }
        for &(u, v) in &self.forbidden {
            if u == v {
                return Err(Error::InvalidConstraints(format!("forbidden edge ({u},{v}) is a self-loop")));
            }
            if v >= n {
                return Err(Error::IndexOutOfRange { index: v, n });
            }
            if self.removed.contains(&u) || self.removed.contains(&v) {
                return Err(Error::InvalidConstraints(format!(
                    "forbidden edge ({u},{v}) references a removed node"
                )));
            }
        }
        let active: Vec<usize> = (0..n).filter(|i| !self.removed.contains(i)).collect();
        if active.len() < 3 {
            return Err(Error::InvalidConstraints(format!(
                "only {} nodes remain after removals; at least 3 are needed",
                active.len()
            )));
        }
        Ok(active)
    }
}

fn edge_key(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

/// Cost table over the active nodes (local indices) with Big-M overrides.
pub(crate) struct CostTable {
    m: usize,
    cost: Vec<f64>,
}

impl CostTable {
    pub(crate) fn new(metric: &ScaledMetric, active: &[usize], cons: &SolveConstraints) -> Self {
        let m = active.len();
        let mut cost = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                if a != b {
                    cost[a * m + b] = if cons.is_forbidden(active[a], active[b]) {
                        FORBID_COST
                    } else {
                        metric.d(active[a], active[b])
                    };
                }
            }
        }
        CostTable { m, cost }
    }

    #[inline]
    pub(crate) fn c(&self, a: usize, b: usize) -> f64 {
        self.cost[a * self.m + b]
    }

    pub(crate) fn cycle_cost(&self, local: &[usize]) -> f64 {
        let m = local.len();
        (0..m).map(|t| self.c(local[t], local[(t + 1) % m])).sum()
    }
}

/// Rotates and orients a cycle: start at its smallest element, then step to
/// the smaller of that element's two neighbours.
pub fn canonicalize(order: &[usize]) -> Vec<usize> {
    let m = order.len();
    if m == 0 {
        return Vec::new();
    }
    let start = (0..m).min_by_key(|&t| order[t]).unwrap();
    let next = order[(start + 1) % m];
    let prev = order[(start + m - 1) % m];
    if next <= prev {
        (0..m).map(|k| order[(start + k) % m]).collect()
    } else {
        (0..m).map(|k| order[(start + m - k) % m]).collect()
    }
}

/// Closed-cycle length of `order` on the canonical scaled metric. Never applies
/// the forbid penalty.
pub fn tour_length(inst: &Instance, order: &[usize]) -> Result<f64> {
    tour_length_with(&ScaledMetric::new(inst), order)
}

pub fn tour_length_with(metric: &ScaledMetric, order: &[usize]) -> Result<f64> {
    let n = metric.n();
    if order.len() < 3 {
        return Err(Error::InvalidTour(format!("a tour needs at least 3 nodes, got {}", order.len())));
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidTour(format!("node {i} is visited twice")));
        }
    }
    Ok(raw_length(metric, order))
}

pub(crate) fn raw_length(metric: &ScaledMetric, order: &[usize]) -> f64 {
    let m = order.len();
    (0..m).map(|t| metric.d(order[t], order[(t + 1) % m])).sum()
}

/// Checks that `order` visits exactly the active nodes of `cons`.
pub fn validate_tour(order: &[usize], n: usize, cons: &SolveConstraints) -> Result<()> {
    let active = cons.active_nodes(n)?;
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != active {
        return Err(Error::InvalidTour("order is not a permutation of the active nodes".into()));
    }
    Ok(())
}

/// Shared tail of every solver: map local indices back, canonicalize, check
/// for Big-M contamination and report the geometric length.
pub(crate) fn finish(
    metric: &ScaledMetric,
    active: &[usize],
    local_order: &[usize],
    search_cost: f64,
    exact: bool,
) -> Result<Tour> {
    if !(search_cost < FORBID_COST / 2.0) {
        return Err(Error::Infeasible { cost: search_cost });
    }
    let order = canonicalize(&local_order.iter().map(|&a| active[a]).collect::<Vec<_>>());
    let length = raw_length(metric, &order);
    Ok(Tour { order, length, exact })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::make_instance;

    fn square() -> Instance {
        make_instance(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], "square").unwrap()
    }

    #[test]
    fn canonical_orientation() {
        assert_eq!(canonicalize(&[2, 0, 3, 1]), vec![0, 2, 1, 3]);
        assert_eq!(canonicalize(&[3, 1, 2, 0]), vec![0, 2, 1, 3]);
        assert_eq!(canonicalize(&[1, 2, 3, 0]), vec![0, 1, 2, 3]);
        assert_eq!(canonicalize(&[0, 3, 2, 1]), vec![0, 1, 2, 3]);
    }

    #[test]
    fn square_tour_lengths() {
        let sq = square();
        assert!((tour_length(&sq, &[0, 1, 2, 3]).unwrap() - 400.0).abs() < 1e-9);
        let crossing = 200.0 + 200.0 * 2f64.sqrt();
        assert!((tour_length(&sq, &[0, 2, 1, 3]).unwrap() - crossing).abs() < 1e-9);
        assert_eq!(tour_length(&sq, &[3, 2, 1, 0]).unwrap(), tour_length(&sq, &[0, 1, 2, 3]).unwrap());
    }

    #[test]
    fn tour_length_rejects_non_permutations() {
        let sq = square();
        assert!(matches!(tour_length(&sq, &[0, 1, 1, 3]), Err(Error::InvalidTour(_))));
        assert!(matches!(tour_length(&sq, &[0, 1, 7]), Err(Error::IndexOutOfRange { .. })));
        assert!(tour_length(&sq, &[0, 1]).is_err());
    }

    #[test]
    fn constraint_validation() {
        assert_eq!(SolveConstraints::new().active_nodes(4).unwrap(), vec![0, 1, 2, 3]);
        let c = SolveConstraints::new().removing(0).forbidding(0, 1);
        assert!(matches!(c.active_nodes(4), Err(Error::InvalidConstraints(_))));
        let c = SolveConstraints::new().removing(0).removing(1);
        assert!(c.active_nodes(4).is_err());
        assert!(SolveConstraints::new().removing(9).active_nodes(4).is_err());
        assert!(SolveConstraints::new().forbidding(2, 2).active_nodes(4).is_err());
        assert_eq!(
            SolveConstraints::new().forbidding(3, 1),
            SolveConstraints::new().forbidding(1, 3)
        );
    }
}
