//! CSV and JSON writers.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use lyapkit::report::{IterationRecord, SolveReport};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;

pub const HISTORY_FILE: &str = "residual_history.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SHIFTS_FILE: &str = "shifts.json";
pub const Z_FILE: &str = "z.mtx";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const COMPARISON_HISTORY_FILE: &str = "comparison_history.csv";

pub const HISTORY_HEADER: [&str; 8] = ["j", "m", "space_dim", "resnorm_abs", "resnorm_rel", "shift_re", "shift_im", "eps_inn"];

/// Scientific notation with 16 digits after the point; parses back to the same `f64`.
pub fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_sci(x: Option<f64>) -> String {
    x.map(sci).unwrap_or_default()
}

fn history_fields(rec: &IterationRecord) -> Vec<String> {
    vec![
        rec.j.to_string(),
        rec.m.to_string(),
        rec.space_dim.to_string(),
        sci(rec.resnorm_abs),
        sci(rec.resnorm_rel),
        opt_sci(rec.shift.map(|p| p.re)),
        opt_sci(rec.shift.map(|p| p.im)),
        opt_sci(rec.eps_inn),
    ]
}

pub fn write_history(path: &Path, report: &SolveReport) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HISTORY_HEADER)?;
    for rec in &report.records {
        w.write_record(history_fields(rec))?;
    }
    w.flush()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub status: String,
    pub converged: bool,
    pub iterations: usize,
    pub space_dim: usize,
    pub z_columns: usize,
    pub final_resnorm_abs: f64,
    pub final_resnorm_rel: f64,
    pub nu: f64,
    pub n: usize,
    pub q: usize,
    pub num_shifts: usize,
    pub num_complex_shifts: usize,
    pub wall_time_s: f64,
    pub warnings: Vec<String>,
    pub config: Value,
}

impl Summary {
    pub fn new(cfg: &RunConfig, report: &SolveReport, n: usize, q: usize, z_columns: usize) -> Self {
        Self {
            method: report.method.name().into(),
            status: report.status.name().into(),
            converged: report.converged(),
            iterations: report.iterations,
            space_dim: report.space_dim,
            z_columns,
            final_resnorm_abs: report.final_resnorm_abs(),
            final_resnorm_rel: report.final_resnorm_rel(),
            nu: report.nu,
            n,
            q,
            num_shifts: report.shifts.len(),
            num_complex_shifts: report.shifts.iter().filter(|p| p.im != 0.0).count(),
            wall_time_s: report.wall_time.as_secs_f64(),
            warnings: report.warnings.clone(),
            config: cfg.echo(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

pub fn shifts_json(shifts: &[Complex64]) -> Value {
    Value::Array(shifts.iter().map(|p| serde_json::json!([p.re, p.im])).collect())
}

pub fn read_shifts(path: &Path) -> Result<Vec<Complex64>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let pairs: Vec<[f64; 2]> = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(pairs.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
}

/// One row of the comparison table.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub method: String,
    /// Empty for methods without shifts.
    pub shifts: String,
    pub status: String,
    pub iterations: Option<usize>,
    pub space_dim: Option<usize>,
    pub final_resnorm_rel: Option<f64>,
    pub num_shifts: Option<usize>,
    pub wall_time_s: Option<f64>,
    pub failed: bool,
}

pub const COMPARISON_HEADER: [&str; 9] =
    ["method", "shifts", "status", "iterations", "space_dim", "final_resnorm_rel", "num_shifts", "wall_time_s", "failed"];

pub fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COMPARISON_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.shifts.clone(),
            r.status.clone(),
            r.iterations.map(|v| v.to_string()).unwrap_or_default(),
            r.space_dim.map(|v| v.to_string()).unwrap_or_default(),
            opt_sci(r.final_resnorm_rel),
            r.num_shifts.map(|v| v.to_string()).unwrap_or_default(),
            r.wall_time_s.map(|v| format!("{v:.6}")).unwrap_or_default(),
            r.failed.to_string(),
        ])?;
    }
    w.flush()
}

/// All histories stacked, with `rel_gap = |r − r_lradi| / r_lradi` at equal `j`.
pub fn write_comparison_history(path: &Path, reports: &[&SolveReport]) -> std::io::Result<()> {
    let reference = reports.iter().find(|r| r.method == lyapkit::report::Method::Lradi);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["method"];
    header.extend(HISTORY_HEADER);
    header.push("rel_gap");
    w.write_record(&header)?;
    for rep in reports {
        for rec in &rep.records {
            let gap = match reference {
                Some(base) if base.method != rep.method && rep.method.uses_shifts() => base
                    .records
                    .iter()
                    .find(|b| b.j == rec.j)
                    .map(|b| (rec.resnorm_abs - b.resnorm_abs).abs() / b.resnorm_abs),
                _ => None,
            };
            let mut row = vec![rep.method.name().to_string()];
            row.extend(history_fields(rec));
            row.push(opt_sci(gap));
            w.write_record(&row)?;
        }
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sci_round_trips() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt() * 1e-300, 123456789.123456789, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(sci(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(sci(1.5), "1.5000000000000000e0");
    }

    #[test]
    fn shifts_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(SHIFTS_FILE);
        let shifts = vec![Complex64::new(-1.0, 0.0), Complex64::new(-0.5, 2.25), Complex64::new(-0.5, -2.25)];
        write_json(&path, &shifts_json(&shifts)).unwrap();
        assert_eq!(read_shifts(&path).unwrap(), shifts);
    }
}
