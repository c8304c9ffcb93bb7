//! Nearest-neighbour construction followed by first-improvement 2-opt.
//!
//! Only used above the exact cap; results carry `exact = false`.

use super::{finish, CostTable, SolveConstraints, Tour};
use crate::error::Result;
use crate::instances::{Instance, ScaledMetric};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const IMPROVEMENT_EPS: f64 = 1e-10;

pub fn solve_heuristic(inst: &Instance, cons: &SolveConstraints, seed: u64) -> Result<Tour> {
    solve_heuristic_with(&ScaledMetric::new(inst), cons, seed)
}

/// The seed picks the construction start node.
pub fn solve_heuristic_with(metric: &ScaledMetric, cons: &SolveConstraints, seed: u64) -> Result<Tour> {
    let active = cons.active_nodes(metric.n())?;
    let m = active.len();
    let table = CostTable::new(metric, &active, cons);
    let start = (ChaCha8Rng::seed_from_u64(seed).next_u64() % m as u64) as usize;

    let mut order = nearest_neighbor(&table, m, start);
    two_opt(&table, &mut order);
    let cost = table.cycle_cost(&order);
    finish(metric, &active, &order, cost, false)
}

fn nearest_neighbor(table: &CostTable, m: usize, start: usize) -> Vec<usize> {
    let mut visited = vec![false; m];
    let mut order = Vec::with_capacity(m);
    let mut cur = start;
    visited[cur] = true;
    order.push(cur);
    for _ in 1..m {
        let mut best = usize::MAX;
        let mut best_cost = f64::INFINITY;
        for next in 0..m {
            if !visited[next] && table.c(cur, next) < best_cost {
                best_cost = table.c(cur, next);
                best = next;
            }
        }
        visited[best] = true;
        order.push(best);
        cur = best;
    }
    order
}

fn two_opt(table: &CostTable, order: &mut [usize]) {
    let m = order.len();
    if m < 4 {
        return;
    }
    'restart: loop {
        for i in 0..m - 1 {
            for j in (i + 2)..m {
                if i == 0 && j == m - 1 {
                    continue;
                }
                let (a, b) = (order[i], order[i + 1]);
                let (c, d) = (order[j], order[(j + 1) % m]);
                let delta = table.c(a, c) + table.c(b, d) - table.c(a, b) - table.c(c, d);
                if delta < -IMPROVEMENT_EPS {
                    order[i + 1..=j].reverse();
                    continue 'restart;
                }
            }
        }
        break;
    }
}
