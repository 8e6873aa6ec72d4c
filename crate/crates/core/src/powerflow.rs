//! DC power flow over the electrical graph, with a quadratic loss
//! correction.
//!
//! Each island is solved independently: angles come from the reduced susceptance
//! system `B' theta = P` with the island slack pinned at angle zero, line
//! flows are `(theta_i - theta_j) / x`, and a second solve corrects for
//! resistive losses by charging each line's first-pass loss half to either
//! endpoint. The island slack picks up the total imbalance, so per-island
//! conservation holds by construction.
//!
//! Islands with loads but no generator are not solvable; their loads are
//! reported as unserved and the environment treats that as game over.

use crate::grid::{islands, ElecNode, Grid, GridState};
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;
use thiserror::Error;

/// Scheduled injections for one step, in MW. The slack generator's entry
/// is a forecast only; the solve rebalances it.
#[derive(Clone, Debug)]
pub struct Injections {
    pub gen_p: Vec<f64>,
    pub load_p: Vec<f64>,
}

/// Solved operating point. Per-line quantities are indexed like the spec's
/// line vector; flows are signed origin -> extremity.
#[derive(Clone, Debug)]
pub struct PowerFlowResult {
    /// MW on each line (0 for non-conducting lines and unsolved islands).
    pub line_flow: Vec<f64>,
    /// |flow| / thermal_limit.
    pub rho: Vec<f64>,
    /// Resistive loss per line in MW, from the corrected flows.
    pub line_loss: Vec<f64>,
    pub total_loss: f64,
    /// Actual output of the designated slack generator (0 if it sits on no
    /// live node).
    pub slack_p: f64,
    /// Actual output per generator: scheduled, except island slacks which
    /// absorb their island's imbalance.
    pub gen_p: Vec<f64>,
    /// Served load per load: scheduled, or 0 when unserved.
    pub load_p: Vec<f64>,
    /// Voltage angle in radians for every live node (0 in unsolved islands).
    pub node_angle: BTreeMap<ElecNode, f64>,
    /// Loads sitting in generator-less islands or disconnected outright.
    pub unserved: Vec<usize>,
    /// A reduced system was singular or produced non-finite angles.
    pub diverged: bool,
}

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("injection vector '{0}' has the wrong length")]
    DimensionMismatch(&'static str),
    #[error("non-finite injection for '{0}'")]
    NonFinite(String),
}

fn diverged_result(grid: &Grid) -> PowerFlowResult {
    PowerFlowResult {
        line_flow: vec![0.0; grid.n_line()],
        rho: vec![0.0; grid.n_line()],
        line_loss: vec![0.0; grid.n_line()],
        total_loss: 0.0,
        slack_p: 0.0,
        gen_p: vec![0.0; grid.n_gen()],
        load_p: vec![0.0; grid.n_load()],
        node_angle: BTreeMap::new(),
        unserved: Vec::new(),
        diverged: true,
    }
}

/// Solves the DC power flow for `state` under `inj`.
pub fn solve(
    grid: &Grid,
    state: &GridState,
    inj: &Injections,
) -> Result<PowerFlowResult, PowerFlowError> {
    if inj.gen_p.len() != grid.n_gen() {
        return Err(PowerFlowError::DimensionMismatch("gen_p"));
    }
    if inj.load_p.len() != grid.n_load() {
        return Err(PowerFlowError::DimensionMismatch("load_p"));
    }
    for (g, p) in inj.gen_p.iter().enumerate() {
        if !p.is_finite() {
            return Err(PowerFlowError::NonFinite(grid.spec().generators[g].id.clone()));
        }
    }
    for (l, p) in inj.load_p.iter().enumerate() {
        if !p.is_finite() {
            return Err(PowerFlowError::NonFinite(grid.spec().loads[l].id.clone()));
        }
    }

    let base = grid.base_power();
    let parts = islands(grid, state);
    let n_islands = parts.groups.len();

    let gen_node: Vec<Option<ElecNode>> = (0..grid.n_gen())
        .map(|g| {
            state.gen_bus[g].busbar().map(|b| ElecNode {
                sub: grid.gen_sub(g),
                busbar: b,
            })
        })
        .collect();
    let load_node: Vec<Option<ElecNode>> = (0..grid.n_load())
        .map(|l| {
            state.load_bus[l].busbar().map(|b| ElecNode {
                sub: grid.load_sub(l),
                busbar: b,
            })
        })
        .collect();

    let mut island_gens: Vec<Vec<usize>> = vec![Vec::new(); n_islands];
    for g in 0..grid.n_gen() {
        if let Some(node) = gen_node[g] {
            island_gens[parts.island_of(node).expect("gen node is live")].push(g);
        }
    }
    let mut island_loads: Vec<Vec<usize>> = vec![Vec::new(); n_islands];
    for l in 0..grid.n_load() {
        if let Some(node) = load_node[l] {
            island_loads[parts.island_of(node).expect("load node is live")].push(l);
        }
    }
    let mut island_lines: Vec<Vec<usize>> = vec![Vec::new(); n_islands];
    for l in 0..grid.n_line() {
        if let Some((a, _)) = state.line_nodes(grid, l) {
            island_lines[parts.island_of(a).expect("line node is live")].push(l);
        }
    }

    let mut result = PowerFlowResult {
        line_flow: vec![0.0; grid.n_line()],
        rho: vec![0.0; grid.n_line()],
        line_loss: vec![0.0; grid.n_line()],
        total_loss: 0.0,
        slack_p: 0.0,
        gen_p: vec![0.0; grid.n_gen()],
        load_p: vec![0.0; grid.n_load()],
        node_angle: parts
            .groups
            .iter()
            .flatten()
            .map(|&n| (n, 0.0))
            .collect(),
        unserved: Vec::new(),
        diverged: false,
    };
    for (l, node) in load_node.iter().enumerate() {
        if node.is_none() {
            result.unserved.push(l);
        }
    }

    for island in 0..n_islands {
        let members = &parts.groups[island];
        if island_gens[island].is_empty() {
            // No source: nothing to solve, loads here go dark.
            result.unserved.extend(island_loads[island].iter().copied());
            continue;
        }

        // The designated slack balances its own island; elsewhere the
        // lowest-indexed member generator takes the role.
        let slack_gen = if gen_node[grid.slack()]
            .and_then(|n| parts.island_of(n))
            == Some(island)
        {
            grid.slack()
        } else {
            island_gens[island][0]
        };
        let slack_node = gen_node[slack_gen].expect("island slack is connected");

        let index_of: BTreeMap<ElecNode, usize> = members
            .iter()
            .enumerate()
            .map(|(i, &n)| (n, i))
            .collect();
        let n = members.len();
        let slack_i = index_of[&slack_node];

        // Reduced system: drop the slack node's row and column.
        let reduced: Vec<usize> = (0..n).filter(|&i| i != slack_i).collect();
        let pos: BTreeMap<usize, usize> = reduced
            .iter()
            .enumerate()
            .map(|(r, &i)| (i, r))
            .collect();

        let mut b_red = DMatrix::<f64>::zeros(reduced.len(), reduced.len());
        for &l in &island_lines[island] {
            let (na, nb) = state.line_nodes(grid, l).expect("conducting");
            let (ia, ib) = (index_of[&na], index_of[&nb]);
            if ia == ib {
                continue;
            }
            let b = 1.0 / grid.spec().lines[l].reactance;
            if let Some(&ra) = pos.get(&ia) {
                b_red[(ra, ra)] += b;
            }
            if let Some(&rb) = pos.get(&ib) {
                b_red[(rb, rb)] += b;
            }
            if let (Some(&ra), Some(&rb)) = (pos.get(&ia), pos.get(&ib)) {
                b_red[(ra, rb)] -= b;
                b_red[(rb, ra)] -= b;
            }
        }

        // Net scheduled injection per node in p.u.; island slack excluded.
        let mut p_node = vec![0.0; n];
        for &g in &island_gens[island] {
            if g != slack_gen {
                p_node[index_of[&gen_node[g].unwrap()]] += inj.gen_p[g] / base;
            }
        }
        for &l in &island_loads[island] {
            p_node[index_of[&load_node[l].unwrap()]] -= inj.load_p[l] / base;
        }

        let solve_reduced = |lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
                             p: &[f64]|
         -> Option<Vec<f64>> {
            if reduced.is_empty() {
                return Some(vec![0.0; n]);
            }
            let rhs = DVector::from_iterator(reduced.len(), reduced.iter().map(|&i| p[i]));
            let theta_red = lu.solve(&rhs)?;
            if theta_red.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let mut theta = vec![0.0; n];
            for (r, &i) in reduced.iter().enumerate() {
                theta[i] = theta_red[r];
            }
            Some(theta)
        };

        let lu = b_red.clone().lu();
        let theta1 = match solve_reduced(&lu, &p_node) {
            Some(t) => t,
            None => return Ok(diverged_result(grid)),
        };

        // First-pass losses, charged half to each endpoint, then the one
        // corrective re-solve.
        let flow_of = |theta: &[f64], l: usize| -> f64 {
            let (na, nb) = state.line_nodes(grid, l).expect("conducting");
            let (ia, ib) = (index_of[&na], index_of[&nb]);
            (theta[ia] - theta[ib]) / grid.spec().lines[l].reactance * base
        };
        let mut p_corr = p_node.clone();
        for &l in &island_lines[island] {
            let f = flow_of(&theta1, l);
            let loss = grid.spec().lines[l].resistance * (f / base).powi(2) * base;
            let (na, nb) = state.line_nodes(grid, l).expect("conducting");
            p_corr[index_of[&na]] -= 0.5 * loss / base;
            p_corr[index_of[&nb]] -= 0.5 * loss / base;
        }
        let theta2 = match solve_reduced(&lu, &p_corr) {
            Some(t) => t,
            None => return Ok(diverged_result(grid)),
        };

        let mut island_loss = 0.0;
        for &l in &island_lines[island] {
            let f = flow_of(&theta2, l);
            result.line_flow[l] = f;
            result.rho[l] = f.abs() / grid.spec().lines[l].thermal_limit;
            let loss = grid.spec().lines[l].resistance * (f / base).powi(2) * base;
            result.line_loss[l] = loss;
            island_loss += loss;
        }
        result.total_loss += island_loss;
        for (&node, &i) in &index_of {
            result.node_angle.insert(node, theta2[i]);
        }

        let mut balance = island_loss;
        for &l in &island_loads[island] {
            result.load_p[l] = inj.load_p[l];
            balance += inj.load_p[l];
        }
        for &g in &island_gens[island] {
            if g != slack_gen {
                result.gen_p[g] = inj.gen_p[g];
                balance -= inj.gen_p[g];
            }
        }
        result.gen_p[slack_gen] = balance;
        if slack_gen == grid.slack() {
            result.slack_p = balance;
        }
    }

    result.unserved.sort_unstable();
    result.unserved.dedup();
    Ok(result)
}

/// Feasibility of the designated slack's operating point, with a 1e-6 MW
/// tolerance on either bound.
pub fn apply_slack_limits(grid: &Grid, result: &PowerFlowResult) -> bool {
    let g = &grid.spec().generators[grid.slack()];
    result.slack_p >= g.p_min - 1e-6 && result.slack_p <= g.p_max + 1e-6
}
