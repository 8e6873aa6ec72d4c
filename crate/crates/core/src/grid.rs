//! Static grid description and switchable topology state.
//!
//! A grid is a set of substations, each with two busbars. Generators, loads
//! and line endpoints attach to one busbar of their substation or are
//! disconnected. The *electrical* topology, the graph the power flow
//! actually sees, is derived from those assignments: every busbar with at
//! least one attached element becomes an electrical node, and a line
//! conducts only when both of its endpoints sit on a busbar.
//!
//! [`GridSpec`] is the serde-facing description (what `case5.json` holds),
//! [`Grid`] is the validated form with id references resolved to indices,
//! and [`GridState`] is the switchable part that actions and the
//! environment mutate.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Generator production technology. Only surfaces as an observation
/// feature; the DC solver treats all generators alike.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenType {
    Solar,
    Wind,
    Hydro,
    Thermal,
    Nuclear,
}

impl GenType {
    /// Fixed one-hot ordering used by the element-graph observation.
    pub const ALL: [GenType; 5] = [
        GenType::Solar,
        GenType::Wind,
        GenType::Hydro,
        GenType::Thermal,
        GenType::Nuclear,
    ];
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubstationSpec {
    pub id: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub id: String,
    pub substation_id: String,
    /// Lower output bound in MW. The slack generator is infeasible below it.
    pub p_min: f64,
    /// Upper output bound in MW.
    pub p_max: f64,
    pub max_ramp_up: f64,
    pub max_ramp_down: f64,
    pub min_uptime: u32,
    pub min_downtime: u32,
    pub cost_per_mw: f64,
    pub startup_cost: f64,
    pub shutdown_cost: f64,
    pub gen_type: GenType,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoadSpec {
    pub id: String,
    pub substation_id: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LineSpec {
    pub id: String,
    pub from_substation_id: String,
    pub to_substation_id: String,
    /// Series reactance in p.u. on `base_power`. Must be positive.
    pub reactance: f64,
    /// Series resistance in p.u., used only by the loss correction.
    pub resistance: f64,
    /// Thermal rating in MW; loading rho is |flow| / thermal_limit.
    pub thermal_limit: f64,
}

/// Serialized grid description, the schema of `case5.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSpec {
    pub substations: Vec<SubstationSpec>,
    pub generators: Vec<GeneratorSpec>,
    pub loads: Vec<LoadSpec>,
    pub lines: Vec<LineSpec>,
    /// Id of the generator that balances each power flow solve.
    pub slack_generator: String,
    /// MVA base for the per-unit conversion.
    pub base_power: f64,
}

/// One failed validation rule, naming the offending element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub element: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.element, self.rule)
    }
}

/// Outcome of [`validate_spec`]; empty means the spec is well-formed.
#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, element: &str, rule: impl Into<String>) {
        self.violations.push(Violation {
            element: element.to_string(),
            rule: rule.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

fn check_finite(report: &mut ValidationReport, element: &str, field: &str, value: f64) {
    if !value.is_finite() {
        report.push(element, format!("{field} must be finite"));
    }
}

/// Structural validation of a [`GridSpec`]: unique ids per element class,
/// resolvable substation references, positive reactances and thermal
/// limits, non-negative resistances, p_min <= p_max, a positive base power
/// and exactly one resolvable slack generator.
pub fn validate_spec(spec: &GridSpec) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut subs = BTreeSet::new();
    for s in &spec.substations {
        if !subs.insert(s.id.as_str()) {
            report.push(&s.id, "duplicate substation id");
        }
    }
    let check_sub = |report: &mut ValidationReport, element: &str, sub: &str| {
        if !subs.contains(sub) {
            report.push(element, format!("unknown substation '{sub}'"));
        }
    };

    let mut gen_ids = BTreeSet::new();
    for g in &spec.generators {
        if !gen_ids.insert(g.id.as_str()) {
            report.push(&g.id, "duplicate generator id");
        }
        check_sub(&mut report, &g.id, &g.substation_id);
        for (field, value) in [
            ("p_min", g.p_min),
            ("p_max", g.p_max),
            ("max_ramp_up", g.max_ramp_up),
            ("max_ramp_down", g.max_ramp_down),
            ("cost_per_mw", g.cost_per_mw),
            ("startup_cost", g.startup_cost),
            ("shutdown_cost", g.shutdown_cost),
        ] {
            check_finite(&mut report, &g.id, field, value);
        }
        if g.p_min > g.p_max {
            report.push(&g.id, "p_min must not exceed p_max");
        }
    }

    let mut load_ids = BTreeSet::new();
    for l in &spec.loads {
        if !load_ids.insert(l.id.as_str()) {
            report.push(&l.id, "duplicate load id");
        }
        check_sub(&mut report, &l.id, &l.substation_id);
    }

    let mut line_ids = BTreeSet::new();
    for l in &spec.lines {
        if !line_ids.insert(l.id.as_str()) {
            report.push(&l.id, "duplicate line id");
        }
        check_sub(&mut report, &l.id, &l.from_substation_id);
        check_sub(&mut report, &l.id, &l.to_substation_id);
        check_finite(&mut report, &l.id, "reactance", l.reactance);
        check_finite(&mut report, &l.id, "resistance", l.resistance);
        check_finite(&mut report, &l.id, "thermal_limit", l.thermal_limit);
        if !(l.reactance > 0.0) {
            report.push(&l.id, "reactance must be > 0");
        }
        if l.resistance < 0.0 {
            report.push(&l.id, "resistance must be >= 0");
        }
        if !(l.thermal_limit > 0.0) {
            report.push(&l.id, "thermal_limit must be > 0");
        }
    }

    if !gen_ids.contains(spec.slack_generator.as_str()) {
        report.push(
            &spec.slack_generator,
            "slack_generator must name an existing generator",
        );
    }
    if !(spec.base_power > 0.0) || !spec.base_power.is_finite() {
        report.push("base_power", "base_power must be positive and finite");
    }

    report
}

/// Validated grid with id references resolved to dense indices. All
/// runtime code works in terms of element indices into the spec vectors;
/// string ids only matter at the serialization boundary.
#[derive(Clone, Debug)]
pub struct Grid {
    spec: GridSpec,
    gen_sub: Vec<usize>,
    load_sub: Vec<usize>,
    line_sub: Vec<(usize, usize)>,
    slack: usize,
}

impl Grid {
    /// Validates `spec` and resolves references. Returns the full report on
    /// any violation.
    pub fn new(spec: GridSpec) -> Result<Self, ValidationReport> {
        let report = validate_spec(&spec);
        if !report.is_ok() {
            return Err(report);
        }
        let sub_index: BTreeMap<&str, usize> = spec
            .substations
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        let gen_sub = spec
            .generators
            .iter()
            .map(|g| sub_index[g.substation_id.as_str()])
            .collect();
        let load_sub = spec
            .loads
            .iter()
            .map(|l| sub_index[l.substation_id.as_str()])
            .collect();
        let line_sub = spec
            .lines
            .iter()
            .map(|l| {
                (
                    sub_index[l.from_substation_id.as_str()],
                    sub_index[l.to_substation_id.as_str()],
                )
            })
            .collect();
        let slack = spec
            .generators
            .iter()
            .position(|g| g.id == spec.slack_generator)
            .expect("validated above");
        Ok(Grid {
            spec,
            gen_sub,
            load_sub,
            line_sub,
            slack,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn n_sub(&self) -> usize {
        self.spec.substations.len()
    }

    pub fn n_gen(&self) -> usize {
        self.spec.generators.len()
    }

    pub fn n_load(&self) -> usize {
        self.spec.loads.len()
    }

    pub fn n_line(&self) -> usize {
        self.spec.lines.len()
    }

    /// Substation index of generator `g`.
    pub fn gen_sub(&self, g: usize) -> usize {
        self.gen_sub[g]
    }

    /// Substation index of load `l`.
    pub fn load_sub(&self, l: usize) -> usize {
        self.load_sub[l]
    }

    /// (origin, extremity) substation indices of line `l`.
    pub fn line_sub(&self, l: usize) -> (usize, usize) {
        self.line_sub[l]
    }

    /// Index of the slack generator.
    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn base_power(&self) -> f64 {
        self.spec.base_power
    }
}

/// One of the two busbars of a substation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Busbar {
    B1,
    B2,
}

/// Where an element terminal currently sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusAssignment {
    Disconnected,
    Busbar1,
    Busbar2,
}

impl BusAssignment {
    pub fn busbar(self) -> Option<Busbar> {
        match self {
            BusAssignment::Disconnected => None,
            BusAssignment::Busbar1 => Some(Busbar::B1),
            BusAssignment::Busbar2 => Some(Busbar::B2),
        }
    }

    pub fn is_connected(self) -> bool {
        self != BusAssignment::Disconnected
    }
}

/// A live busbar: one vertex of the electrical graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ElecNode {
    pub sub: usize,
    pub busbar: Busbar,
}

impl fmt::Display for ElecNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = match self.busbar {
            Busbar::B1 => 1,
            Busbar::B2 => 2,
        };
        write!(f, "sub{}:bb{}", self.sub, b)
    }
}

/// The switchable half of the world: bus assignments plus the timers that
/// gate future switching. Indexed parallel to the [`Grid`] element vectors.
///
/// Invariants the environment maintains: timers are non-negative by type; a
/// line with a running reconnection or attack timer has both endpoints
/// disconnected; overflow counters of disconnected lines are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub gen_bus: Vec<BusAssignment>,
    pub load_bus: Vec<BusAssignment>,
    /// Per line: (origin, extremity) assignment.
    pub line_bus: Vec<(BusAssignment, BusAssignment)>,
    /// Steps until the line may be switched again.
    pub line_cooldown: Vec<u32>,
    /// Steps until elements of the substation may be switched again.
    pub sub_cooldown: Vec<u32>,
    /// Consecutive soft-overflow steps per line.
    pub overflow_counter: Vec<u32>,
    /// Steps until a line disconnected for security may be reconnected.
    pub reconnection_timer: Vec<u32>,
    /// Remaining steps of an opponent attack on the line.
    pub attack_timer: Vec<u32>,
    /// Per line: `(steps_until_start, duration)` of the nearest maintenance
    /// window. `(0, d)` with `d > 0` means maintenance is active for `d`
    /// more steps. `None` means nothing scheduled.
    pub maintenance: Vec<Option<(u32, u32)>>,
    /// Position inside the running scenario.
    pub step_index: usize,
}

impl GridState {
    /// Everything on busbar 1, no timers: the reference topology.
    pub fn default_topology(grid: &Grid) -> Self {
        GridState {
            gen_bus: vec![BusAssignment::Busbar1; grid.n_gen()],
            load_bus: vec![BusAssignment::Busbar1; grid.n_load()],
            line_bus: vec![(BusAssignment::Busbar1, BusAssignment::Busbar1); grid.n_line()],
            line_cooldown: vec![0; grid.n_line()],
            sub_cooldown: vec![0; grid.n_sub()],
            overflow_counter: vec![0; grid.n_line()],
            reconnection_timer: vec![0; grid.n_line()],
            attack_timer: vec![0; grid.n_line()],
            maintenance: vec![None; grid.n_line()],
            step_index: 0,
        }
    }

    /// Both endpoints on a busbar, i.e. the line carries flow.
    pub fn line_conducting(&self, line: usize) -> bool {
        let (a, b) = self.line_bus[line];
        a.is_connected() && b.is_connected()
    }

    /// Maintenance window currently forcing the line out.
    pub fn in_maintenance(&self, line: usize) -> bool {
        matches!(self.maintenance[line], Some((0, d)) if d > 0)
    }

    /// Electrical nodes of both endpoints, if conducting.
    pub fn line_nodes(&self, grid: &Grid, line: usize) -> Option<(ElecNode, ElecNode)> {
        let (a, b) = self.line_bus[line];
        let (sa, sb) = grid.line_sub(line);
        match (a.busbar(), b.busbar()) {
            (Some(ba), Some(bb)) => Some((
                ElecNode { sub: sa, busbar: ba },
                ElecNode { sub: sb, busbar: bb },
            )),
            _ => None,
        }
    }
}

/// Every busbar with at least one attached element terminal (generator,
/// load, or line endpoint). Disconnected elements attach nothing.
pub fn electrical_nodes(grid: &Grid, state: &GridState) -> BTreeSet<ElecNode> {
    let mut nodes = BTreeSet::new();
    for (g, bus) in state.gen_bus.iter().enumerate() {
        if let Some(b) = bus.busbar() {
            nodes.insert(ElecNode {
                sub: grid.gen_sub(g),
                busbar: b,
            });
        }
    }
    for (l, bus) in state.load_bus.iter().enumerate() {
        if let Some(b) = bus.busbar() {
            nodes.insert(ElecNode {
                sub: grid.load_sub(l),
                busbar: b,
            });
        }
    }
    for (l, (a, b)) in state.line_bus.iter().enumerate() {
        let (sa, sb) = grid.line_sub(l);
        if let Some(ba) = a.busbar() {
            nodes.insert(ElecNode {
                sub: sa,
                busbar: ba,
            });
        }
        if let Some(bb) = b.busbar() {
            nodes.insert(ElecNode {
                sub: sb,
                busbar: bb,
            });
        }
    }
    nodes
}

/// Partition of the electrical nodes into connected components under
/// conducting lines. Group order is deterministic: by smallest member node.
#[derive(Clone, Debug)]
pub struct Islands {
    pub groups: Vec<Vec<ElecNode>>,
    index: BTreeMap<ElecNode, usize>,
}

impl Islands {
    /// Island index of `node`, if the node is live.
    pub fn island_of(&self, node: ElecNode) -> Option<usize> {
        self.index.get(&node).copied()
    }
}

/// Connected components of the electrical graph.
pub fn islands(grid: &Grid, state: &GridState) -> Islands {
    let nodes = electrical_nodes(grid, state);
    let mut adj: BTreeMap<ElecNode, Vec<ElecNode>> =
        nodes.iter().map(|&n| (n, Vec::new())).collect();
    for l in 0..grid.n_line() {
        if let Some((a, b)) = state.line_nodes(grid, l) {
            adj.get_mut(&a).unwrap().push(b);
            adj.get_mut(&b).unwrap().push(a);
        }
    }

    let mut index = BTreeMap::new();
    let mut groups = Vec::new();
    for &start in &nodes {
        if index.contains_key(&start) {
            continue;
        }
        let id = groups.len();
        let mut group = Vec::new();
        let mut stack = vec![start];
        index.insert(start, id);
        while let Some(n) = stack.pop() {
            group.push(n);
            for &m in &adj[&n] {
                if !index.contains_key(&m) {
                    index.insert(m, id);
                    stack.push(m);
                }
            }
        }
        group.sort();
        groups.push(group);
    }
    Islands { groups, index }
}

/// Sparse topology change: only the assignments that differ from the
/// current state. Applying a delta returns its inverse, so a change can be
/// undone exactly (timers aside).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TopoDelta {
    pub gens: Vec<(usize, BusAssignment)>,
    pub loads: Vec<(usize, BusAssignment)>,
    pub lines: Vec<(usize, (BusAssignment, BusAssignment))>,
}

impl TopoDelta {
    pub fn is_empty(&self) -> bool {
        self.gens.is_empty() && self.loads.is_empty() && self.lines.is_empty()
    }
}

/// Applies `delta` to `state` and returns the inverse delta. Expects at
/// most one entry per element, which [`crate::action::decode`] guarantees.
pub fn apply_delta(state: &mut GridState, delta: &TopoDelta) -> TopoDelta {
    let mut inverse = TopoDelta::default();
    for &(g, bus) in &delta.gens {
        inverse.gens.push((g, state.gen_bus[g]));
        state.gen_bus[g] = bus;
    }
    for &(l, bus) in &delta.loads {
        inverse.loads.push((l, state.load_bus[l]));
        state.load_bus[l] = bus;
    }
    for &(l, bus) in &delta.lines {
        inverse.lines.push((l, state.line_bus[l]));
        state.line_bus[l] = bus;
    }
    inverse
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn triangle_spec() -> GridSpec {
        GridSpec {
            substations: ["s0", "s1", "s2"]
                .iter()
                .map(|id| SubstationSpec { id: id.to_string() })
                .collect(),
            generators: vec![GeneratorSpec {
                id: "gen_0".into(),
                substation_id: "s0".into(),
                p_min: 0.0,
                p_max: 30.0,
                max_ramp_up: 5.0,
                max_ramp_down: 5.0,
                min_uptime: 0,
                min_downtime: 0,
                cost_per_mw: 10.0,
                startup_cost: 0.0,
                shutdown_cost: 0.0,
                gen_type: GenType::Thermal,
            }],
            loads: vec![
                LoadSpec {
                    id: "load_0".into(),
                    substation_id: "s1".into(),
                },
                LoadSpec {
                    id: "load_1".into(),
                    substation_id: "s2".into(),
                },
            ],
            lines: ["s0-s1", "s0-s2", "s1-s2"]
                .iter()
                .enumerate()
                .map(|(i, ends)| {
                    let (a, b) = ends.split_once('-').unwrap();
                    LineSpec {
                        id: format!("line_{i}"),
                        from_substation_id: a.into(),
                        to_substation_id: b.into(),
                        reactance: 0.1,
                        resistance: 0.0,
                        thermal_limit: 10.0,
                    }
                })
                .collect(),
            slack_generator: "gen_0".into(),
            base_power: 100.0,
        }
    }

    #[test]
    fn validate_accepts_triangle_and_case5() {
        assert!(validate_spec(&triangle_spec()).is_ok());
        assert!(validate_spec(&fixtures::case5()).is_ok());
    }

    #[test]
    fn validate_flags_each_rule() {
        let mut s = triangle_spec();
        s.generators[0].p_min = 40.0;
        let report = validate_spec(&s);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].element, "gen_0");
        assert!(report.violations[0].rule.contains("p_min"));

        let mut s = triangle_spec();
        s.lines[1].reactance = 0.0;
        assert!(validate_spec(&s)
            .violations
            .iter()
            .any(|v| v.element == "line_1" && v.rule.contains("reactance")));

        let mut s = triangle_spec();
        s.lines[0].resistance = -0.01;
        assert!(!validate_spec(&s).is_ok());

        let mut s = triangle_spec();
        s.lines[2].thermal_limit = 0.0;
        assert!(!validate_spec(&s).is_ok());

        let mut s = triangle_spec();
        s.loads[1].substation_id = "nope".into();
        let report = validate_spec(&s);
        assert!(report
            .violations
            .iter()
            .any(|v| v.element == "load_1" && v.rule.contains("unknown substation")));

        let mut s = triangle_spec();
        s.slack_generator = "gen_9".into();
        assert!(!validate_spec(&s).is_ok());

        let mut s = triangle_spec();
        s.loads[0].id = "load_1".into();
        assert!(validate_spec(&s)
            .violations
            .iter()
            .any(|v| v.rule.contains("duplicate load id")));

        let mut s = triangle_spec();
        s.base_power = 0.0;
        assert!(!validate_spec(&s).is_ok());

        let mut s = triangle_spec();
        s.generators[0].p_max = f64::NAN;
        assert!(!validate_spec(&s).is_ok());
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let spec = fixtures::case5();
        let text = serde_json::to_string_pretty(&spec).unwrap();
        let back: GridSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back.generators.len(), spec.generators.len());
        assert_eq!(back.slack_generator, spec.slack_generator);
        assert_eq!(back.lines[3].from_substation_id, spec.lines[3].from_substation_id);
    }

    #[test]
    fn electrical_nodes_counts_match_topology() {
        let grid = fixtures::case5_grid();
        let mut state = GridState::default_topology(&grid);
        assert_eq!(electrical_nodes(&grid, &state).len(), 5);

        // Splitting substation 0: its generator moves to busbar 2 while the
        // line endpoints stay on busbar 1.
        state.gen_bus[0] = BusAssignment::Busbar2;
        assert_eq!(electrical_nodes(&grid, &state).len(), 6);

        let mut state = GridState::default_topology(&grid);
        for b in &mut state.gen_bus {
            *b = BusAssignment::Disconnected;
        }
        for b in &mut state.load_bus {
            *b = BusAssignment::Disconnected;
        }
        for b in &mut state.line_bus {
            *b = (BusAssignment::Disconnected, BusAssignment::Disconnected);
        }
        assert!(electrical_nodes(&grid, &state).is_empty());
    }

    #[test]
    fn dangling_line_endpoint_is_a_node_but_does_not_conduct() {
        let grid = Grid::new(triangle_spec()).unwrap();
        let mut state = GridState::default_topology(&grid);
        state.line_bus[0] = (BusAssignment::Busbar2, BusAssignment::Disconnected);
        let nodes = electrical_nodes(&grid, &state);
        assert!(nodes.contains(&ElecNode {
            sub: 0,
            busbar: Busbar::B2
        }));
        assert!(!state.line_conducting(0));
        // The dangling busbar is its own island.
        let parts = islands(&grid, &state);
        assert_eq!(parts.groups.len(), 2);
    }

    #[test]
    fn islands_split_when_lines_open() {
        let grid = Grid::new(triangle_spec()).unwrap();
        let mut state = GridState::default_topology(&grid);
        assert_eq!(islands(&grid, &state).groups.len(), 1);

        // Cutting both lines into s2 strands its load.
        state.line_bus[1] = (BusAssignment::Disconnected, BusAssignment::Disconnected);
        state.line_bus[2] = (BusAssignment::Disconnected, BusAssignment::Disconnected);
        let parts = islands(&grid, &state);
        assert_eq!(parts.groups.len(), 2);
        let lonely = parts
            .island_of(ElecNode {
                sub: 2,
                busbar: Busbar::B1,
            })
            .unwrap();
        assert_eq!(parts.groups[lonely].len(), 1);
    }

    #[test]
    fn apply_delta_roundtrips() {
        let grid = fixtures::case5_grid();
        let mut state = GridState::default_topology(&grid);
        let original = state.clone();
        let delta = TopoDelta {
            gens: vec![(1, BusAssignment::Busbar2)],
            loads: vec![(0, BusAssignment::Busbar2)],
            lines: vec![
                (6, (BusAssignment::Disconnected, BusAssignment::Disconnected)),
                (2, (BusAssignment::Busbar1, BusAssignment::Busbar2)),
            ],
        };
        let inverse = apply_delta(&mut state, &delta);
        assert_ne!(state, original);
        apply_delta(&mut state, &inverse);
        assert_eq!(state, original);
    }
}
