//! Aggregation of per-user metrics into table rows, and gate heatmap grids.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::data::DomainSpec;
use crate::error::{Error, Result};
use crate::federation::Mode;
use crate::math::mean_std;
use crate::models::TaskKind;
use crate::moe::{gate, GateParams};

/// Noise multiplier used as a map key; ordered by `f64::total_cmp`.
#[derive(Debug, Clone, Copy)]
pub struct Sigma(pub f64);

impl PartialEq for Sigma {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Sigma {}

impl PartialOrd for Sigma {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Sigma {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Orders Baseline, then FL by ascending sigma, then FL+DE by ascending sigma.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellKey {
    pub system: Mode,
    pub sigma: Sigma,
}

impl CellKey {
    pub fn new(system: Mode, sigma: f64) -> Self {
        CellKey {
            system,
            sigma: Sigma(sigma),
        }
    }
}

pub fn system_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Baseline => "baseline",
        Mode::Fl => "fl",
        Mode::FlDe => "flde",
    }
}

pub fn parse_system(name: &str) -> Option<Mode> {
    match name {
        "baseline" => Some(Mode::Baseline),
        "fl" => Some(Mode::Fl),
        "flde" => Some(Mode::FlDe),
        _ => None,
    }
}

/// Per-user test metrics for every (system, sigma) cell of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub task: TaskKind,
    pub num_users: usize,
    pub cells: BTreeMap<CellKey, Vec<f64>>,
    pub config_digest: String,
}

impl RunReport {
    pub fn new(task: TaskKind, num_users: usize, config_digest: String) -> Self {
        RunReport {
            task,
            num_users,
            cells: BTreeMap::new(),
            config_digest,
        }
    }

    pub fn insert(&mut self, system: Mode, sigma: f64, metrics: Vec<f64>) {
        self.cells.insert(CellKey::new(system, sigma), metrics);
    }

    pub fn get(&self, system: Mode, sigma: f64) -> Option<&[f64]> {
        self.cells.get(&CellKey::new(system, sigma)).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub system: Mode,
    pub sigma: f64,
    pub per_user: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation across users.
    pub std: f64,
}

/// One row per cell, in table order, with mean and population std across
/// users.
pub fn summarize(report: &RunReport) -> Result<Vec<SummaryRow>> {
    if report.cells.is_empty() {
        return Err(Error::IncompleteReport {
            cell: String::from("<none>"),
        });
    }
    report
        .cells
        .iter()
        .map(|(key, metrics)| {
            let label = || format!("{}/{}", system_name(key.system), key.sigma.0);
            if metrics.len() != report.num_users || metrics.iter().any(|m| !m.is_finite()) {
                return Err(Error::IncompleteReport { cell: label() });
            }
            let (mean, std) = mean_std(metrics);
            Ok(SummaryRow {
                system: key.system,
                sigma: key.sigma.0,
                per_user: metrics.clone(),
                mean,
                std,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRange {
    pub lo: f64,
    pub hi: f64,
}

impl AxisRange {
    pub fn new(lo: f64, hi: f64) -> Self {
        AxisRange { lo, hi }
    }

    /// Coordinate of grid point `i` out of `steps`.
    pub fn at(&self, i: usize, steps: usize) -> f64 {
        if i + 1 == steps {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (steps - 1) as f64
        }
    }
}

/// Gate values on a regular `steps × steps` grid, row-major with `x1` as the
/// outer index.
#[derive(Debug, Clone, PartialEq)]
pub struct GateGrid {
    pub x1: AxisRange,
    pub x2: AxisRange,
    pub steps: usize,
    pub values: Vec<f64>,
}

impl GateGrid {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.steps + j]
    }

    /// `(x1, x2, alpha)` triples in row-major order.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.steps).flat_map(move |i| {
            (0..self.steps).map(move |j| (self.x1.at(i, self.steps), self.x2.at(j, self.steps), self.value(i, j)))
        })
    }

    /// Largest pointwise difference to a grid over the same axes.
    pub fn max_abs_diff(&self, other: &GateGrid) -> Result<f64> {
        if self.steps != other.steps || self.x1 != other.x1 || self.x2 != other.x2 {
            return Err(Error::config("grid", "grids cover different points"));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

fn check_range(field: &'static str, r: AxisRange) -> Result<()> {
    if !(r.lo.is_finite() && r.hi.is_finite() && r.lo < r.hi) {
        return Err(Error::config(field, "need finite lo < hi"));
    }
    Ok(())
}

/// Evaluates a 2-d gate on the grid spanned by `x1` and `x2`.
pub fn gate_grid(gate_params: &GateParams, x1: AxisRange, x2: AxisRange, steps: usize) -> Result<GateGrid> {
    if steps < 2 {
        return Err(Error::config("grid_steps", "must be >= 2"));
    }
    check_range("x1_range", x1)?;
    check_range("x2_range", x2)?;
    let mut values = Vec::with_capacity(steps * steps);
    for i in 0..steps {
        for j in 0..steps {
            values.push(gate(gate_params, &[x1.at(i, steps), x2.at(j, steps)])?);
        }
    }
    Ok(GateGrid { x1, x2, steps, values })
}

/// Smallest box covering `mean ± 3 std` of every domain.
pub fn domain_box(specs: &[DomainSpec]) -> Option<(AxisRange, AxisRange)> {
    let mut ranges: Option<[AxisRange; 2]> = None;
    for spec in specs {
        let sd = spec.std_devs();
        let here = [0, 1].map(|a| AxisRange::new(spec.mean[a] - 3.0 * sd[a], spec.mean[a] + 3.0 * sd[a]));
        ranges = Some(match ranges {
            None => here,
            Some(r) => [0, 1].map(|a| AxisRange::new(r[a].lo.min(here[a].lo), r[a].hi.max(here[a].hi))),
        });
    }
    ranges.map(|[a, b]| (a, b))
}
