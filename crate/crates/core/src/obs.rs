//! Three read-outs of the same operating point, one per policy encoder.
//!
//! * [`flat_obs`]: a fixed-width vector of generator voltages and powers,
//!   load powers, line loadings and line statuses.
//! * [`sub_graph_obs`]: the electrical graph the solver saw, one node per
//!   live busbar, with parallel lines between the same node pair merged
//!   into a single aggregated corridor edge.
//! * [`elem_graph_obs`]: a fixed element-level graph with three bus nodes
//!   per substation (ground, busbar 1, busbar 2) and one node per
//!   generator, load, and line; candidate edges connect each element to
//!   every bus node of its substation(s) and a single binary feature marks
//!   the assignment actually in force.
//!
//! DC conventions throughout: voltage magnitudes are 1 p.u. when connected
//! and 0 when not, reactive power is identically zero, and both generator
//! and load active powers are reported positive.

use crate::grid::{electrical_nodes, BusAssignment, ElecNode, GenType, Grid, GridState};
use crate::powerflow::PowerFlowResult;
use ndarray::{Array1, Array2};
use std::collections::BTreeMap;

pub const SUB_NODE_FEAT: usize = 6;
pub const SUB_EDGE_FEAT: usize = 8;

/// Common feature block shared by every element-graph node class:
/// `[|p|, p, q, |v|, cos(theta)]`.
pub const ELEM_COMMON_FEAT: usize = 5;
pub const BUS_FEAT: usize = ELEM_COMMON_FEAT + 4;
pub const GEN_FEAT: usize = ELEM_COMMON_FEAT + 8 + GenType::ALL.len();
pub const LOAD_FEAT: usize = ELEM_COMMON_FEAT;
pub const LINE_FEAT: usize = ELEM_COMMON_FEAT + 4;
/// Reserved element classes; no element of these kinds exists yet, but the
/// encoder still allocates their projections.
pub const STORAGE_FEAT: usize = ELEM_COMMON_FEAT;
pub const SHUNT_FEAT: usize = ELEM_COMMON_FEAT;
pub const ELEM_EDGE_FEAT: usize = 1;

pub fn flat_obs_len(grid: &Grid) -> usize {
    grid.n_gen() * 4 + grid.n_load() * 3 + grid.n_line() * 2
}

/// Flat formalization: `[|v| per gen] ++ [(|p|, p, q) per gen] ++
/// [(|p|, p, q) per load] ++ [rho per line] ++ [status per line]`.
pub fn flat_obs(grid: &Grid, state: &GridState, result: &PowerFlowResult) -> Array1<f64> {
    let mut out = Vec::with_capacity(flat_obs_len(grid));
    for g in 0..grid.n_gen() {
        out.push(if state.gen_bus[g].is_connected() { 1.0 } else { 0.0 });
    }
    for g in 0..grid.n_gen() {
        out.extend([result.gen_p[g].abs(), result.gen_p[g], 0.0]);
    }
    for l in 0..grid.n_load() {
        out.extend([result.load_p[l].abs(), result.load_p[l], 0.0]);
    }
    for l in 0..grid.n_line() {
        out.push(result.rho[l]);
    }
    for l in 0..grid.n_line() {
        out.push(if state.line_conducting(l) { 1.0 } else { 0.0 });
    }
    Array1::from(out)
}

/// Substation-level graph: one node per live electrical node, one edge per
/// conducting corridor (parallel lines merged).
#[derive(Clone, Debug)]
pub struct SubGraphObs {
    /// Row identity of `node_feat`.
    pub nodes: Vec<ElecNode>,
    /// `[n, 6]`: `[|p|, p, q, |v|, sin(theta), cos(theta)]` per node, with
    /// gross and net injections of the attached generators and loads.
    pub node_feat: Array2<f64>,
    /// Corridor endpoints as indices into `nodes`, oriented lower ->
    /// higher.
    pub edges: Vec<(usize, usize)>,
    /// `[e, 8]`: `[p, rho, ts_overflow, ts_cooldown, maintenance, n_lines,
    /// sin(dtheta), cos(dtheta)]`, aggregated over the corridor's lines
    /// (signed flow sums, the rest take maxima or counts).
    pub edge_feat: Array2<f64>,
}

fn next_maintenance_duration(state: &GridState, l: usize) -> f64 {
    state.maintenance[l].map_or(0.0, |(_, d)| d as f64)
}

pub fn sub_graph_obs(grid: &Grid, state: &GridState, result: &PowerFlowResult) -> SubGraphObs {
    let nodes: Vec<ElecNode> = electrical_nodes(grid, state).into_iter().collect();
    let index: BTreeMap<ElecNode, usize> =
        nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();

    let mut node_feat = Array2::zeros((nodes.len(), SUB_NODE_FEAT));
    for (i, node) in nodes.iter().enumerate() {
        let theta = result.node_angle.get(node).copied().unwrap_or(0.0);
        node_feat[(i, 2)] = 0.0;
        node_feat[(i, 3)] = 1.0;
        node_feat[(i, 4)] = theta.sin();
        node_feat[(i, 5)] = theta.cos();
    }
    for g in 0..grid.n_gen() {
        if let Some(b) = state.gen_bus[g].busbar() {
            let i = index[&ElecNode { sub: grid.gen_sub(g), busbar: b }];
            node_feat[(i, 0)] += result.gen_p[g].abs();
            node_feat[(i, 1)] += result.gen_p[g];
        }
    }
    for l in 0..grid.n_load() {
        if let Some(b) = state.load_bus[l].busbar() {
            let i = index[&ElecNode { sub: grid.load_sub(l), busbar: b }];
            node_feat[(i, 0)] += result.load_p[l].abs();
            node_feat[(i, 1)] -= result.load_p[l];
        }
    }

    // Merge parallel lines into corridors keyed by the oriented node pair.
    let mut corridors: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    for l in 0..grid.n_line() {
        if let Some((a, b)) = state.line_nodes(grid, l) {
            let (ia, ib) = (index[&a], index[&b]);
            if ia <= ib {
                corridors.entry((ia, ib)).or_default().push((l, result.line_flow[l]));
            } else {
                corridors.entry((ib, ia)).or_default().push((l, -result.line_flow[l]));
            }
        }
    }

    let mut edges = Vec::with_capacity(corridors.len());
    let mut edge_feat = Array2::zeros((corridors.len(), SUB_EDGE_FEAT));
    for (e, (&(i, j), lines)) in corridors.iter().enumerate() {
        edges.push((i, j));
        let mut p = 0.0;
        let (mut rho, mut ts_over, mut ts_cool, mut maint) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for &(l, flow) in lines {
            p += flow;
            rho = rho.max(result.rho[l]);
            ts_over = ts_over.max(state.overflow_counter[l] as f64);
            ts_cool = ts_cool.max(state.line_cooldown[l] as f64);
            maint = maint.max(next_maintenance_duration(state, l));
        }
        let ti = result.node_angle.get(&nodes[i]).copied().unwrap_or(0.0);
        let tj = result.node_angle.get(&nodes[j]).copied().unwrap_or(0.0);
        edge_feat[(e, 0)] = p;
        edge_feat[(e, 1)] = rho;
        edge_feat[(e, 2)] = ts_over;
        edge_feat[(e, 3)] = ts_cool;
        edge_feat[(e, 4)] = maint;
        edge_feat[(e, 5)] = lines.len() as f64;
        edge_feat[(e, 6)] = (ti - tj).sin();
        edge_feat[(e, 7)] = (ti - tj).cos();
    }

    SubGraphObs { nodes, node_feat, edges, edge_feat }
}

/// Element-level graph with a fixed node set: per substation the three bus
/// nodes ground / busbar 1 / busbar 2, then one node per generator, load,
/// and line. Node indices follow that order.
#[derive(Clone, Debug)]
pub struct ElemGraphObs {
    pub n_sub: usize,
    /// `[3 * n_sub, BUS_FEAT]`: common block, then a ground/busbar-1/
    /// busbar-2 one-hot and the substation cooldown.
    pub bus_feat: Array2<f64>,
    /// `[n_gen, GEN_FEAT]`: common block, then normalized output, ramps,
    /// up/down times, costs, and the generator-type one-hot.
    pub gen_feat: Array2<f64>,
    /// `[n_load, LOAD_FEAT]`: common block only.
    pub load_feat: Array2<f64>,
    /// `[n_line, LINE_FEAT]`: common block (with cos of the endpoint angle
    /// difference), then rho, overflow and cooldown counters, and the next
    /// maintenance duration.
    pub line_feat: Array2<f64>,
    /// Candidate edges `(element node, bus node)` in global node indices:
    /// every element connects to all three bus nodes of its substation,
    /// lines to all six of their two substations.
    pub edges: Vec<(usize, usize)>,
    /// `[e, 1]`: 1.0 exactly on the edge matching the current assignment
    /// of that element endpoint (ground when disconnected), else 0.0.
    pub edge_feat: Array2<f64>,
}

impl ElemGraphObs {
    pub fn n_nodes(&self) -> usize {
        self.n_sub * 3
            + self.gen_feat.nrows()
            + self.load_feat.nrows()
            + self.line_feat.nrows()
    }

    pub fn bus_node(&self, sub: usize, assignment: BusAssignment) -> usize {
        sub * 3
            + match assignment {
                BusAssignment::Disconnected => 0,
                BusAssignment::Busbar1 => 1,
                BusAssignment::Busbar2 => 2,
            }
    }

    pub fn gen_node(&self, g: usize) -> usize {
        self.n_sub * 3 + g
    }

    pub fn load_node(&self, l: usize) -> usize {
        self.n_sub * 3 + self.gen_feat.nrows() + l
    }

    pub fn line_node(&self, l: usize) -> usize {
        self.n_sub * 3 + self.gen_feat.nrows() + self.load_feat.nrows() + l
    }
}

fn common_block(abs_p: f64, p: f64, v: f64, cos_theta: f64) -> [f64; ELEM_COMMON_FEAT] {
    [abs_p, p, 0.0, v, cos_theta]
}

pub fn elem_graph_obs(grid: &Grid, state: &GridState, result: &PowerFlowResult) -> ElemGraphObs {
    let n_sub = grid.n_sub();
    let angle_of = |sub: usize, assignment: BusAssignment| -> f64 {
        assignment
            .busbar()
            .and_then(|b| result.node_angle.get(&ElecNode { sub, busbar: b }))
            .copied()
            .unwrap_or(0.0)
    };

    // Bus nodes: ground, busbar 1, busbar 2 per substation.
    let mut bus_feat = Array2::zeros((n_sub * 3, BUS_FEAT));
    for sub in 0..n_sub {
        for (k, assignment) in [
            BusAssignment::Disconnected,
            BusAssignment::Busbar1,
            BusAssignment::Busbar2,
        ]
        .into_iter()
        .enumerate()
        {
            let row = sub * 3 + k;
            let live = assignment.busbar().is_some_and(|b| {
                result.node_angle.contains_key(&ElecNode { sub, busbar: b })
            });
            let theta = angle_of(sub, assignment);
            let common = common_block(0.0, 0.0, if live { 1.0 } else { 0.0 }, theta.cos());
            for (c, v) in common.into_iter().enumerate() {
                bus_feat[(row, c)] = v;
            }
            bus_feat[(row, ELEM_COMMON_FEAT + k)] = 1.0;
            bus_feat[(row, ELEM_COMMON_FEAT + 3)] = state.sub_cooldown[sub] as f64;
        }
    }
    // Gross and net injections accumulate on the bus the element sits on.
    for g in 0..grid.n_gen() {
        if state.gen_bus[g].is_connected() {
            let row = grid.gen_sub(g) * 3
                + if state.gen_bus[g] == BusAssignment::Busbar1 { 1 } else { 2 };
            bus_feat[(row, 0)] += result.gen_p[g].abs();
            bus_feat[(row, 1)] += result.gen_p[g];
        }
    }
    for l in 0..grid.n_load() {
        if state.load_bus[l].is_connected() {
            let row = grid.load_sub(l) * 3
                + if state.load_bus[l] == BusAssignment::Busbar1 { 1 } else { 2 };
            bus_feat[(row, 0)] += result.load_p[l].abs();
            bus_feat[(row, 1)] -= result.load_p[l];
        }
    }

    let mut gen_feat = Array2::zeros((grid.n_gen(), GEN_FEAT));
    for g in 0..grid.n_gen() {
        let spec = &grid.spec().generators[g];
        let p = result.gen_p[g];
        let connected = state.gen_bus[g].is_connected();
        let theta = angle_of(grid.gen_sub(g), state.gen_bus[g]);
        let common = common_block(p.abs(), p, if connected { 1.0 } else { 0.0 }, theta.cos());
        for (c, v) in common.into_iter().enumerate() {
            gen_feat[(g, c)] = v;
        }
        let span = spec.p_max.abs() - spec.p_min.abs();
        let g_norm = if span == 0.0 { 0.0 } else { (p.abs() - spec.p_min.abs()) / span };
        let extras = [
            g_norm,
            spec.max_ramp_up,
            spec.max_ramp_down,
            spec.min_uptime as f64,
            spec.min_downtime as f64,
            spec.cost_per_mw,
            spec.startup_cost,
            spec.shutdown_cost,
        ];
        for (c, v) in extras.into_iter().enumerate() {
            gen_feat[(g, ELEM_COMMON_FEAT + c)] = v;
        }
        let type_slot = GenType::ALL.iter().position(|&t| t == spec.gen_type).unwrap();
        gen_feat[(g, ELEM_COMMON_FEAT + 8 + type_slot)] = 1.0;
    }

    let mut load_feat = Array2::zeros((grid.n_load(), LOAD_FEAT));
    for l in 0..grid.n_load() {
        let p = result.load_p[l];
        let connected = state.load_bus[l].is_connected();
        let theta = angle_of(grid.load_sub(l), state.load_bus[l]);
        let common = common_block(p.abs(), p, if connected { 1.0 } else { 0.0 }, theta.cos());
        for (c, v) in common.into_iter().enumerate() {
            load_feat[(l, c)] = v;
        }
    }

    let mut line_feat = Array2::zeros((grid.n_line(), LINE_FEAT));
    for l in 0..grid.n_line() {
        let f = result.line_flow[l];
        let conducting = state.line_conducting(l);
        let (from, to) = grid.line_sub(l);
        let dtheta = angle_of(from, state.line_bus[l].0) - angle_of(to, state.line_bus[l].1);
        let common = common_block(f.abs(), f, if conducting { 1.0 } else { 0.0 }, dtheta.cos());
        for (c, v) in common.into_iter().enumerate() {
            line_feat[(l, c)] = v;
        }
        let extras = [
            result.rho[l],
            state.overflow_counter[l] as f64,
            state.line_cooldown[l] as f64,
            next_maintenance_duration(state, l),
        ];
        for (c, v) in extras.into_iter().enumerate() {
            line_feat[(l, ELEM_COMMON_FEAT + c)] = v;
        }
    }

    let mut obs = ElemGraphObs {
        n_sub,
        bus_feat,
        gen_feat,
        load_feat,
        line_feat,
        edges: Vec::new(),
        edge_feat: Array2::zeros((0, ELEM_EDGE_FEAT)),
    };

    let mut edges = Vec::new();
    let mut picks = Vec::new();
    let all = [
        BusAssignment::Disconnected,
        BusAssignment::Busbar1,
        BusAssignment::Busbar2,
    ];
    for g in 0..grid.n_gen() {
        for a in all {
            edges.push((obs.gen_node(g), obs.bus_node(grid.gen_sub(g), a)));
            picks.push(a == state.gen_bus[g]);
        }
    }
    for l in 0..grid.n_load() {
        for a in all {
            edges.push((obs.load_node(l), obs.bus_node(grid.load_sub(l), a)));
            picks.push(a == state.load_bus[l]);
        }
    }
    for l in 0..grid.n_line() {
        let (from, to) = grid.line_sub(l);
        for a in all {
            edges.push((obs.line_node(l), obs.bus_node(from, a)));
            picks.push(a == state.line_bus[l].0);
        }
        for a in all {
            edges.push((obs.line_node(l), obs.bus_node(to, a)));
            picks.push(a == state.line_bus[l].1);
        }
    }
    let mut edge_feat = Array2::zeros((edges.len(), ELEM_EDGE_FEAT));
    for (e, &picked) in picks.iter().enumerate() {
        edge_feat[(e, 0)] = if picked { 1.0 } else { 0.0 };
    }
    obs.edges = edges;
    obs.edge_feat = edge_feat;
    obs
}
