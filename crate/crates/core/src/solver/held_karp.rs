//! Held–Karp dynamic program over subsets.
//!
//! The lowest active node is the fixed start. `best[mask][j]` is the cheapest
//! path from the start through exactly the nodes of `mask` ending at `j`.
//! Time O(2^m m^2), memory O(2^m m) per call.

use super::{finish, CostTable, SolveConstraints, Tour, MAX_EXACT_NODES};
use crate::error::{Error, Result};
use crate::instances::{Instance, ScaledMetric};

pub fn solve_exact(inst: &Instance, cons: &SolveConstraints) -> Result<Tour> {
    solve_exact_with(&ScaledMetric::new(inst), cons)
}

pub fn solve_exact_with(metric: &ScaledMetric, cons: &SolveConstraints) -> Result<Tour> {
    let active = cons.active_nodes(metric.n())?;
    let m = active.len();
    if m > MAX_EXACT_NODES {
        return Err(Error::SizeLimit { got: m, max: MAX_EXACT_NODES });
    }
    let table = CostTable::new(metric, &active, cons);
    let (local, cost) = held_karp(&table, m);
    finish(metric, &active, &local, cost, true)
}

/// Returns the optimal cycle (local indices, starting at 0) and its cost.
fn held_karp(table: &CostTable, m: usize) -> (Vec<usize>, f64) {
    // Node k (1..m) is bit k-1; node 0 is the start.
    let k = m - 1;
    let full = 1usize << k;
    let mut best = vec![f64::INFINITY; full * k];
    let mut parent = vec![u8::MAX; full * k];
    for j in 0..k {
        best[(1 << j) * k + j] = table.c(0, j + 1);
    }
    for mask in 1..full {
        if mask.count_ones() < 2 {
            continue;
        }
        let mut rest = mask;
        while rest != 0 {
            let j = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            let prev_mask = mask ^ (1 << j);
            let row = &best[prev_mask * k..(prev_mask + 1) * k];
            let mut min = f64::INFINITY;
            let mut arg = u8::MAX;
            let mut cand = prev_mask;
            while cand != 0 {
                let i = cand.trailing_zeros() as usize;
                cand &= cand - 1;
                let v = row[i] + table.c(i + 1, j + 1);
                if v < min {
                    min = v;
                    arg = i as u8;
                }
            }
            best[mask * k + j] = min;
            parent[mask * k + j] = arg;
        }
    }

    let last = full - 1;
    let mut min = f64::INFINITY;
    let mut end = 0;
    for j in 0..k {
        let v = best[last * k + j] + table.c(j + 1, 0);
        if v < min {
            min = v;
            end = j;
        }
    }

    let mut order = Vec::with_capacity(m);
    let mut mask = last;
    let mut j = end;
    loop {
        order.push(j + 1);
        let p = parent[mask * k + j];
        mask ^= 1 << j;
        if p == u8::MAX {
            break;
        }
        j = p as usize;
    }
    order.push(0);
    order.reverse();
    (order, min)
}
