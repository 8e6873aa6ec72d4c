//! Bundled five-substation case and its synthetic chronics.
//!
//! The case is small but deliberately not trivial: substation 4 carries the
//! dominant load and is fed over three lines, of which the low-reactance
//! `line_6` does most of the work. Every chronic takes `line_6` out for a
//! nightly maintenance hour, and nothing reconnects it unless the operator
//! does. Fourteen chronics stay inside all thermal limits even without it;
//! the six in [`OVERLOAD_CHRONICS`] peak high enough that the two remaining
//! feeds overload, cascade and strand the load unless `line_6` is back in
//! service. Keeping the grid whole is therefore both the safe and the
//! cheap (lower-loss) policy.
//!
//! Chronic data is generated, not shipped: [`synth_chronics`] is
//! deterministic in its seed, and [`write_fixtures`] lays the standard
//! directory tree out on disk.

use crate::chronics::{Chronic, MaintenanceEvent, DAY_STEPS};
use crate::grid::{
    GenType, GeneratorSpec, Grid, GridSpec, LineSpec, LoadSpec, SubstationSpec,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fs;
use std::io::Write as _;
use std::path::Path;

/// Number of bundled chronics.
pub const N_CHRONICS: usize = 20;
/// Days of data per chronic.
pub const CHRONIC_DAYS: usize = 7;
/// Chronics reserved for evaluation; the training sampler must refuse them.
pub const TEST_CHRONICS: [usize; 2] = [17, 19];
/// Chronics whose peaks exceed the n-1 capacity of the substation-4 feeds,
/// so a policy that never reconnects `line_6` blacks out on them.
pub const OVERLOAD_CHRONICS: [usize; 6] = [3, 5, 11, 14, 17, 19];

/// Line taken out by the nightly maintenance window in every chronic.
pub const MAINTAINED_LINE: usize = 6;

/// Default seed for the bundled fixtures.
pub const FIXTURE_SEED: u64 = 20;

const LOAD_BASE: [f64; 3] = [21.0, 26.0, 45.0];
const LOAD_FLOOR: f64 = 0.45;
const LOAD_NOISE: f64 = 0.015;
const MAINT_START_IN_DAY: usize = 33;
const MAINT_DURATION: usize = 12;

/// Training chronic ids: everything not in [`TEST_CHRONICS`].
pub fn train_chronics() -> Vec<usize> {
    (0..N_CHRONICS)
        .filter(|c| !TEST_CHRONICS.contains(c))
        .collect()
}

fn overload_scale(chronic: usize) -> Option<f64> {
    match chronic {
        3 => Some(1.10),
        5 => Some(1.12),
        11 => Some(1.14),
        14 => Some(1.12),
        17 => Some(1.16),
        19 => Some(1.13),
        _ => None,
    }
}

/// The bundled five-substation grid description.
pub fn case5() -> GridSpec {
    let sub = |i: usize| format!("sub_{i}");
    let line = |i: usize, from: usize, to: usize, x: f64, r: f64, limit: f64| LineSpec {
        id: format!("line_{i}"),
        from_substation_id: sub(from),
        to_substation_id: sub(to),
        reactance: x,
        resistance: r,
        thermal_limit: limit,
    };
    GridSpec {
        substations: (0..5).map(|i| SubstationSpec { id: sub(i) }).collect(),
        generators: vec![
            GeneratorSpec {
                id: "gen_0".into(),
                substation_id: sub(0),
                p_min: 5.0,
                p_max: 150.0,
                max_ramp_up: 15.0,
                max_ramp_down: 15.0,
                min_uptime: 6,
                min_downtime: 6,
                cost_per_mw: 36.0,
                startup_cost: 280.0,
                shutdown_cost: 90.0,
                gen_type: GenType::Thermal,
            },
            GeneratorSpec {
                id: "gen_1".into(),
                substation_id: sub(1),
                p_min: 0.0,
                p_max: 40.0,
                max_ramp_up: 10.0,
                max_ramp_down: 10.0,
                min_uptime: 0,
                min_downtime: 0,
                cost_per_mw: 14.0,
                startup_cost: 60.0,
                shutdown_cost: 25.0,
                gen_type: GenType::Hydro,
            },
        ],
        loads: vec![
            LoadSpec {
                id: "load_0".into(),
                substation_id: sub(2),
            },
            LoadSpec {
                id: "load_1".into(),
                substation_id: sub(3),
            },
            LoadSpec {
                id: "load_2".into(),
                substation_id: sub(4),
            },
        ],
        lines: vec![
            line(0, 0, 1, 0.10, 0.020, 60.0),
            line(1, 0, 2, 0.08, 0.016, 60.0),
            line(2, 0, 3, 0.08, 0.016, 60.0),
            line(3, 1, 2, 0.10, 0.020, 50.0),
            line(4, 1, 4, 0.12, 0.024, 28.0),
            line(5, 2, 3, 0.12, 0.024, 50.0),
            line(6, 2, 4, 0.05, 0.010, 26.0),
            line(7, 3, 4, 0.12, 0.024, 17.0),
        ],
        slack_generator: "gen_0".into(),
        base_power: 100.0,
    }
}

/// [`case5`] already validated and indexed.
pub fn case5_grid() -> Grid {
    Grid::new(case5()).expect("bundled case validates")
}

/// Fraction of the daily swing at hour `h`: 0 at 03:00, 1 at 15:00.
fn daily(h: f64) -> f64 {
    0.5 * (1.0 - (std::f64::consts::TAU * (h - 3.0) / 24.0).cos())
}

struct Ar1 {
    rng: ChaCha8Rng,
    value: f64,
}

impl Ar1 {
    fn new(seed: u64) -> Self {
        Ar1 {
            rng: ChaCha8Rng::seed_from_u64(seed),
            value: 0.0,
        }
    }

    /// Smooth unit-variance noise: phi = 0.92 keeps swings on the scale of
    /// an hour rather than a step.
    fn next(&mut self) -> f64 {
        let eps: f64 = self.rng.sample(StandardNormal);
        self.value = 0.92 * self.value + 0.392 * eps;
        self.value
    }
}

fn stream_seed(seed: u64, chronic: usize, role: u64) -> u64 {
    seed.wrapping_add((chronic as u64 * 8 + role).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Generates the twenty bundled chronics for the [`case5`] grid. Fully
/// deterministic in `seed`.
pub fn synth_chronics(grid: &Grid, seed: u64) -> Vec<Chronic> {
    assert_eq!(grid.n_gen(), 2, "generator is specific to the bundled case");
    assert_eq!(grid.n_load(), 3, "generator is specific to the bundled case");
    let len = CHRONIC_DAYS * DAY_STEPS;
    let g0 = &grid.spec().generators[0];
    let g1 = &grid.spec().generators[1];

    (0..N_CHRONICS)
        .map(|id| {
            let mut misc = ChaCha8Rng::seed_from_u64(stream_seed(seed, id, 7));
            let scale = overload_scale(id).unwrap_or_else(|| misc.gen_range(0.78..0.86));
            let mut load_noise =
                [Ar1::new(stream_seed(seed, id, 0)), Ar1::new(stream_seed(seed, id, 1)), Ar1::new(stream_seed(seed, id, 2))];
            let mut hydro_noise = Ar1::new(stream_seed(seed, id, 3));

            let mut gen_p = Array2::zeros((len, 2));
            let mut load_p = Array2::zeros((len, 3));
            let mut price = Vec::with_capacity(len);
            for t in 0..len {
                let h = (t % DAY_STEPS) as f64 * STEP_HOURS;
                let d = daily(h);
                let mut total_load = 0.0;
                for l in 0..3 {
                    let p = LOAD_BASE[l]
                        * scale
                        * (LOAD_FLOOR + (1.0 - LOAD_FLOOR) * d)
                        * (1.0 + LOAD_NOISE * load_noise[l].next());
                    let p = p.max(0.0);
                    load_p[[t, l]] = p;
                    total_load += p;
                }
                let hydro = (17.0
                    + 4.0 * (std::f64::consts::TAU * (h - 8.0) / 24.0).sin()
                    + 0.8 * hydro_noise.next())
                .clamp(8.0, 22.0_f64.min(g1.p_max));
                gen_p[[t, 1]] = hydro;
                // Scheduled slack output is a forecast; the solver rebalances.
                gen_p[[t, 0]] = (total_load - hydro + 1.0).clamp(g0.p_min, g0.p_max);
                price.push(35.0 + 15.0 * d);
            }

            let maintenance = (0..CHRONIC_DAYS)
                .map(|day| MaintenanceEvent {
                    line: MAINTAINED_LINE,
                    start: day * DAY_STEPS + MAINT_START_IN_DAY + misc.gen_range(0..6),
                    duration: MAINT_DURATION,
                })
                .collect();

            Chronic {
                id,
                gen_p,
                load_p,
                price,
                maintenance,
            }
        })
        .collect()
}

const STEP_HOURS: f64 = crate::chronics::STEP_MINUTES as f64 / 60.0;

/// Writes `case5.json` plus `chronics/<id>/*.csv` under `dir`.
pub fn write_fixtures(dir: &Path, seed: u64) -> std::io::Result<()> {
    let grid = case5_grid();
    fs::create_dir_all(dir)?;
    let spec_json = serde_json::to_string_pretty(&case5()).expect("spec serializes");
    fs::write(dir.join("case5.json"), spec_json + "\n")?;
    for chronic in synth_chronics(&grid, seed) {
        write_chronic(&dir.join("chronics").join(chronic.id.to_string()), &grid, &chronic)?;
    }
    Ok(())
}

/// Writes one chronic directory in the standard CSV layout.
pub fn write_chronic(dir: &Path, grid: &Grid, chronic: &Chronic) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let gen_ids: Vec<&str> = grid.spec().generators.iter().map(|g| g.id.as_str()).collect();
    let load_ids: Vec<&str> = grid.spec().loads.iter().map(|l| l.id.as_str()).collect();

    write_csv(&dir.join("prod_p.csv"), &gen_ids, chronic.len(), |t, g| {
        chronic.gen_p[[t, g]]
    })?;
    write_csv(&dir.join("load_p.csv"), &load_ids, chronic.len(), |t, l| {
        chronic.load_p[[t, l]]
    })?;
    write_csv(&dir.join("prices.csv"), &["price"], chronic.len(), |t, _| {
        chronic.price[t]
    })?;

    let mut file = fs::File::create(dir.join("maintenance.csv"))?;
    writeln!(file, "line_id,start,duration")?;
    for e in &chronic.maintenance {
        writeln!(
            file,
            "{},{},{}",
            grid.spec().lines[e.line].id,
            e.start,
            e.duration
        )?;
    }
    Ok(())
}

fn write_csv(
    path: &Path,
    header: &[&str],
    rows: usize,
    cell: impl Fn(usize, usize) -> f64,
) -> std::io::Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "{}", header.join(","))?;
    let mut line = String::new();
    for t in 0..rows {
        line.clear();
        for c in 0..header.len() {
            if c > 0 {
                line.push(',');
            }
            // Shortest round-trip formatting so written data loads back
            // bit-identical.
            line.push_str(&format!("{}", cell(t, c)));
        }
        writeln!(file, "{line}")?;
    }
    Ok(())
}
