//! Exhaustive enumeration of the (m-1)!/2 distinct cycles. Test oracle only.

use super::{finish, CostTable, SolveConstraints, Tour, MAX_BRUTE_FORCE_NODES};
use crate::error::{Error, Result};
use crate::instances::{Instance, ScaledMetric};

/// How forbidden edges enter the enumeration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForbidMode {
    /// Forbidden edges cost [`super::FORBID_COST`], as in the exact solver.
    BigM,
    /// Cycles using a forbidden edge are skipped.
    Structural,
}

pub fn solve_brute_force(inst: &Instance, cons: &SolveConstraints) -> Result<Tour> {
    solve_brute_force_with(&ScaledMetric::new(inst), cons, ForbidMode::BigM)
}

pub fn solve_brute_force_structural(inst: &Instance, cons: &SolveConstraints) -> Result<Tour> {
    solve_brute_force_with(&ScaledMetric::new(inst), cons, ForbidMode::Structural)
}

pub fn solve_brute_force_with(metric: &ScaledMetric, cons: &SolveConstraints, mode: ForbidMode) -> Result<Tour> {
    let active = cons.active_nodes(metric.n())?;
    let m = active.len();
    if m > MAX_BRUTE_FORCE_NODES {
        return Err(Error::SizeLimit { got: m, max: MAX_BRUTE_FORCE_NODES });
    }
    let table = CostTable::new(metric, &active, cons);
    let allowed: Vec<bool> = (0..m * m)
        .map(|ab| {
            let (a, b) = (ab / m, ab % m);
            mode == ForbidMode::BigM || a == b || !cons.is_forbidden(active[a], active[b])
        })
        .collect();

    let mut search = Search {
        table: &table,
        allowed: &allowed,
        m,
        path: vec![0],
        used: vec![false; m],
        best: f64::INFINITY,
        best_path: Vec::new(),
    };
    search.used[0] = true;
    search.extend(0.0);

    if search.best_path.is_empty() {
        return Err(Error::Infeasible { cost: f64::INFINITY });
    }
    let (best, best_path) = (search.best, search.best_path);
    finish(metric, &active, &best_path, best, true)
}

struct Search<'a> {
    table: &'a CostTable,
    allowed: &'a [bool],
    m: usize,
    path: Vec<usize>,
    used: Vec<bool>,
    best: f64,
    best_path: Vec<usize>,
}

impl Search<'_> {
    fn extend(&mut self, cost: f64) {
        let m = self.m;
        let last = *self.path.last().unwrap();
        if self.path.len() == m {
            // each undirected cycle is seen twice; keep the orientation with path[1] < path[m-1]
            if self.path[1] > self.path[m - 1] {
                return;
            }
            if !self.allowed[last * m] {
                return;
            }
            let total = cost + self.table.c(last, 0);
            if total < self.best {
                self.best = total;
                self.best_path = self.path.clone();
            }
            return;
        }
        for next in 1..m {
            if self.used[next] || !self.allowed[last * m + next] {
                continue;
            }
            self.used[next] = true;
            self.path.push(next);
            self.extend(cost + self.table.c(last, next));
            self.path.pop();
            self.used[next] = false;
        }
    }
}
