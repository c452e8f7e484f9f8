//! CSV artifacts: per-user results, per-cell summaries and gate grids.
//!
//! Metrics are written with 4 decimals. Grid coordinates and gate values use
//! the shortest representation that parses back to the same `f64`.

use std::io::{Read, Write};

use flde_core::report::{system_name, AxisRange, GateGrid, RunReport, SummaryRow};

/// `system,sigma,user_id,metric`, one row per user per cell, in table order.
pub fn write_results<W: Write>(out: W, report: &RunReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["system", "sigma", "user_id", "metric"])?;
    for (key, metrics) in &report.cells {
        for (user, m) in metrics.iter().enumerate() {
            w.write_record([
                system_name(key.system).to_string(),
                key.sigma.0.to_string(),
                user.to_string(),
                format!("{m:.4}"),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `system,sigma,mean,std`; `std` is the population std across users.
pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["system", "sigma", "mean", "std"])?;
    for row in rows {
        w.write_record([
            system_name(row.system).to_string(),
            row.sigma.to_string(),
            format!("{:.4}", row.mean),
            format!("{:.4}", row.std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `x1,x2,alpha`, row-major with `x1` as the outer index.
pub fn write_gate_grid<W: Write>(out: W, grid: &GateGrid) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x1", "x2", "alpha"])?;
    for (x1, x2, alpha) in grid.points() {
        w.write_record([x1.to_string(), x2.to_string(), alpha.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_gate_grid`]. The grid must be square and row-major.
pub fn read_gate_grid<R: Read>(input: R) -> Result<GateGrid, String> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(|e| e.to_string())?.clone();
    if headers.iter().collect::<Vec<_>>() != ["x1", "x2", "alpha"] {
        return Err(format!("unexpected header {headers:?}"));
    }
    let mut points = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let parse = |k: usize| -> Result<f64, String> {
            rec.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| format!("row {}: bad column {k}", i + 1))
        };
        points.push((parse(0)?, parse(1)?, parse(2)?));
    }
    let steps = (points.len() as f64).sqrt().round() as usize;
    if steps < 2 || steps * steps != points.len() {
        return Err(format!("{} rows do not form a square grid", points.len()));
    }
    let x1 = AxisRange::new(points[0].0, points[points.len() - 1].0);
    let x2 = AxisRange::new(points[0].1, points[steps - 1].1);
    let values = points.iter().map(|p| p.2).collect();
    Ok(GateGrid { x1, x2, steps, values })
}
