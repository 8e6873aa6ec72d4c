//! Time series driving the environment: scheduled generation, load, prices
//! and maintenance windows, at a fixed 5-minute resolution.
//!
//! On disk a chronic is a directory of CSV files (`prod_p.csv`,
//! `load_p.csv`, `prices.csv` and optionally `maintenance.csv`). Columns
//! bind to grid elements by header name, so file column order is free.
//! Episodes run on a [`ChronicSlice`], a window selected by a [`Scenario`]
//! (whole days of offset plus a horizon).

use crate::grid::Grid;
use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Wall-clock minutes per step.
pub const STEP_MINUTES: usize = 5;
/// Steps per day of chronic data.
pub const DAY_STEPS: usize = 24 * 60 / STEP_MINUTES;
/// Episode length used for training scenarios (three days).
pub const TRAIN_HORIZON: usize = 3 * DAY_STEPS;
/// Number of whole-day start offsets a scenario may use.
pub const OFFSET_DAYS: usize = 5;

/// Scheduled outage: the line is forced out for `duration` steps starting
/// at step `start` of the chronic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaintenanceEvent {
    pub line: usize,
    pub start: usize,
    pub duration: usize,
}

/// In-memory chronic: row `t` of each matrix is one 5-minute step.
#[derive(Clone, Debug)]
pub struct Chronic {
    pub id: usize,
    /// Scheduled generator output in MW, `[steps, n_gen]`.
    pub gen_p: Array2<f64>,
    /// Load demand in MW, `[steps, n_load]`.
    pub load_p: Array2<f64>,
    /// Energy price in currency per MWh.
    pub price: Vec<f64>,
    pub maintenance: Vec<MaintenanceEvent>,
}

impl Chronic {
    pub fn len(&self) -> usize {
        self.price.len()
    }

    pub fn is_empty(&self) -> bool {
        self.price.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum ChronicError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: missing column for '{id}'")]
    MissingColumn { file: String, id: String },
    #[error("{file}: column '{id}' does not match any grid element")]
    UnknownColumn { file: String, id: String },
    #[error("{file} row {row}, column '{col}': not a finite number")]
    Cell { file: String, row: usize, col: String },
    #[error("load '{id}' is negative at row {row}")]
    NegativeLoad { row: usize, id: String },
    #[error("generator '{id}' outside [0, p_max] at row {row}")]
    GenOutOfRange { row: usize, id: String },
    #[error("{file}: expected {expected} data rows, found {found}")]
    LengthMismatch {
        file: String,
        expected: usize,
        found: usize,
    },
    #[error("maintenance row {row}: {msg}")]
    Maintenance { row: usize, msg: String },
}

fn read_matrix(
    path: &Path,
    file: &str,
    ids: &[&str],
) -> Result<Array2<f64>, ChronicError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => ChronicError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => ChronicError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{other:?}")),
        },
    })?;

    // Bind CSV columns to element indices by header name.
    let headers = reader
        .headers()
        .map_err(|e| io_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    let mut col_of = vec![None; ids.len()];
    for (c, name) in headers.iter().enumerate() {
        match ids.iter().position(|id| id == name) {
            Some(e) => col_of[e] = Some(c),
            None => {
                return Err(ChronicError::UnknownColumn {
                    file: file.into(),
                    id: name.clone(),
                })
            }
        }
    }
    let col_of: Vec<usize> = col_of
        .into_iter()
        .enumerate()
        .map(|(e, c)| {
            c.ok_or_else(|| ChronicError::MissingColumn {
                file: file.into(),
                id: ids[e].to_string(),
            })
        })
        .collect::<Result<_, _>>()?;

    let mut rows: Vec<f64> = Vec::new();
    let mut n_rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| io_err(path, e))?;
        for (e, &c) in col_of.iter().enumerate() {
            let raw = record.get(c).unwrap_or("");
            let value: f64 = raw.trim().parse().map_err(|_| ChronicError::Cell {
                file: file.into(),
                row: r + 1,
                col: ids[e].to_string(),
            })?;
            if !value.is_finite() {
                return Err(ChronicError::Cell {
                    file: file.into(),
                    row: r + 1,
                    col: ids[e].to_string(),
                });
            }
            rows.push(value);
        }
        n_rows += 1;
    }
    Ok(Array2::from_shape_vec((n_rows, ids.len()), rows).expect("row-major fill"))
}

fn io_err(path: &Path, e: csv::Error) -> ChronicError {
    ChronicError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    }
}

/// Loads one chronic directory and validates it against the grid.
pub fn load_chronic(dir: &Path, grid: &Grid, id: usize) -> Result<Chronic, ChronicError> {
    let gen_ids: Vec<&str> = grid.spec().generators.iter().map(|g| g.id.as_str()).collect();
    let load_ids: Vec<&str> = grid.spec().loads.iter().map(|l| l.id.as_str()).collect();

    let gen_p = read_matrix(&dir.join("prod_p.csv"), "prod_p.csv", &gen_ids)?;
    let load_p = read_matrix(&dir.join("load_p.csv"), "load_p.csv", &load_ids)?;
    let price_mat = read_matrix(&dir.join("prices.csv"), "prices.csv", &["price"])?;
    let price: Vec<f64> = price_mat.column(0).to_vec();

    let expected = gen_p.nrows();
    for (file, found) in [("load_p.csv", load_p.nrows()), ("prices.csv", price.len())] {
        if found != expected {
            return Err(ChronicError::LengthMismatch {
                file: file.into(),
                expected,
                found,
            });
        }
    }

    let maintenance = load_maintenance(&dir.join("maintenance.csv"), grid, expected)?;

    let chronic = Chronic {
        id,
        gen_p,
        load_p,
        price,
        maintenance,
    };
    validate_chronic(grid, &chronic)?;
    Ok(chronic)
}

fn load_maintenance(
    path: &Path,
    grid: &Grid,
    len: usize,
) -> Result<Vec<MaintenanceEvent>, ChronicError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let mut events = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| io_err(path, e))?;
        let field = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        let line_id = field(0);
        let line = grid
            .spec()
            .lines
            .iter()
            .position(|l| l.id == line_id)
            .ok_or_else(|| ChronicError::Maintenance {
                row: r + 1,
                msg: format!("unknown line '{line_id}'"),
            })?;
        let start: usize = field(1).parse().map_err(|_| ChronicError::Maintenance {
            row: r + 1,
            msg: "start is not an integer".into(),
        })?;
        let duration: usize = field(2).parse().map_err(|_| ChronicError::Maintenance {
            row: r + 1,
            msg: "duration is not an integer".into(),
        })?;
        if start >= len {
            return Err(ChronicError::Maintenance {
                row: r + 1,
                msg: format!("start {start} beyond chronic length {len}"),
            });
        }
        if duration == 0 {
            return Err(ChronicError::Maintenance {
                row: r + 1,
                msg: "duration must be >= 1".into(),
            });
        }
        events.push(MaintenanceEvent {
            line,
            start,
            duration,
        });
    }
    events.sort_by_key(|e| (e.line, e.start));
    Ok(events)
}

/// Writes a chronic into `dir` in the same CSV layout [`load_chronic`]
/// reads: `prod_p.csv`, `load_p.csv`, `prices.csv`, and (only when
/// events exist) `maintenance.csv`. Values round-trip exactly.
pub fn save_chronic(dir: &Path, grid: &Grid, chronic: &Chronic) -> Result<(), ChronicError> {
    let io = |path: &Path, source: std::io::Error| ChronicError::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;

    let write_matrix = |name: &str, ids: Vec<&str>, matrix: &Array2<f64>| {
        let path = dir.join(name);
        let mut writer = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        writer.write_record(&ids).map_err(|e| io_err(&path, e))?;
        for row in matrix.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writer.write_record(&cells).map_err(|e| io_err(&path, e))?;
        }
        writer.flush().map_err(|e| io(&path, e))
    };

    let gen_ids = grid.spec().generators.iter().map(|g| g.id.as_str()).collect();
    write_matrix("prod_p.csv", gen_ids, &chronic.gen_p)?;
    let load_ids = grid.spec().loads.iter().map(|l| l.id.as_str()).collect();
    write_matrix("load_p.csv", load_ids, &chronic.load_p)?;
    let prices = Array2::from_shape_vec((chronic.price.len(), 1), chronic.price.clone())
        .expect("column shape");
    write_matrix("prices.csv", vec!["price"], &prices)?;

    if !chronic.maintenance.is_empty() {
        let path = dir.join("maintenance.csv");
        let mut writer = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        writer
            .write_record(["line_id", "start", "duration"])
            .map_err(|e| io_err(&path, e))?;
        for event in &chronic.maintenance {
            let line_id = &grid.spec().lines[event.line].id;
            writer
                .write_record([line_id.as_str(), &event.start.to_string(), &event.duration.to_string()])
                .map_err(|e| io_err(&path, e))?;
        }
        writer.flush().map_err(|e| io(&path, e))?;
    }
    Ok(())
}

/// Chronic invariants: loads non-negative, generator schedules inside
/// `[0, p_max]`, consistent lengths.
pub fn validate_chronic(grid: &Grid, chronic: &Chronic) -> Result<(), ChronicError> {
    let len = chronic.len();
    for (file, found) in [
        ("prod_p.csv", chronic.gen_p.nrows()),
        ("load_p.csv", chronic.load_p.nrows()),
    ] {
        if found != len {
            return Err(ChronicError::LengthMismatch {
                file: file.into(),
                expected: len,
                found,
            });
        }
    }
    for t in 0..len {
        for (g, spec) in grid.spec().generators.iter().enumerate() {
            let p = chronic.gen_p[[t, g]];
            if !(0.0..=spec.p_max).contains(&p) {
                return Err(ChronicError::GenOutOfRange {
                    row: t + 1,
                    id: spec.id.clone(),
                });
            }
        }
        for (l, spec) in grid.spec().loads.iter().enumerate() {
            if chronic.load_p[[t, l]] < 0.0 {
                return Err(ChronicError::NegativeLoad {
                    row: t + 1,
                    id: spec.id.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Which window of which chronic an episode runs on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub chronic: usize,
    /// Start offset in whole days from the beginning of the chronic.
    pub offset_days: usize,
    /// Episode length in steps.
    pub horizon: usize,
}

impl Scenario {
    pub fn start(&self) -> usize {
        self.offset_days * DAY_STEPS
    }
}

#[derive(Debug, Error)]
#[error("scenario window [{start}, {end}) exceeds chronic of length {len}")]
pub struct SliceError {
    pub start: usize,
    pub end: usize,
    pub len: usize,
}

/// Borrowed view of the scenario's window into a chronic. Step indices are
/// relative to the window start.
#[derive(Clone, Copy, Debug)]
pub struct ChronicSlice<'a> {
    chronic: &'a Chronic,
    start: usize,
    len: usize,
}

impl<'a> ChronicSlice<'a> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn chronic_id(&self) -> usize {
        self.chronic.id
    }

    pub fn gen_p(&self, t: usize) -> ArrayView1<'a, f64> {
        debug_assert!(t < self.len);
        self.chronic.gen_p.row(self.start + t)
    }

    pub fn load_p(&self, t: usize) -> ArrayView1<'a, f64> {
        debug_assert!(t < self.len);
        self.chronic.load_p.row(self.start + t)
    }

    pub fn price(&self, t: usize) -> f64 {
        debug_assert!(t < self.len);
        self.chronic.price[self.start + t]
    }

    /// Maintenance events clipped to the window, starts re-based to it.
    pub fn maintenance(&self) -> Vec<MaintenanceEvent> {
        let end = self.start + self.len;
        let mut out = Vec::new();
        for e in &self.chronic.maintenance {
            let e_end = e.start + e.duration;
            if e_end <= self.start || e.start >= end {
                continue;
            }
            let clipped_start = e.start.max(self.start);
            let clipped_end = e_end.min(end);
            out.push(MaintenanceEvent {
                line: e.line,
                start: clipped_start - self.start,
                duration: clipped_end - clipped_start,
            });
        }
        out
    }
}

/// Window of `chronic` described by `scenario`.
pub fn slice<'a>(chronic: &'a Chronic, scenario: &Scenario) -> Result<ChronicSlice<'a>, SliceError> {
    let start = scenario.start();
    let end = start + scenario.horizon;
    if end > chronic.len() || scenario.horizon == 0 {
        return Err(SliceError {
            start,
            end,
            len: chronic.len(),
        });
    }
    Ok(ChronicSlice {
        chronic,
        start,
        len: scenario.horizon,
    })
}

/// Uniform draw over the (chronic, day-offset) grid: every pair has
/// probability `1 / (chronics.len() * OFFSET_DAYS)`.
pub fn sample_scenario<R: Rng + ?Sized>(rng: &mut R, chronics: &[usize]) -> Scenario {
    assert!(!chronics.is_empty(), "no chronics to sample from");
    let k = rng.gen_range(0..chronics.len() * OFFSET_DAYS);
    Scenario {
        chronic: chronics[k / OFFSET_DAYS],
        offset_days: k % OFFSET_DAYS,
        horizon: TRAIN_HORIZON,
    }
}
