//! Batch front end for the lyapkit solvers.
//!
//! `solve` runs one configuration and writes `residual_history.csv`,
//! `summary.json`, `shifts.json` and optionally `z.mtx`. `compare` runs
//! several methods on one problem, optionally replaying the shifts of the
//! first into the others, and writes `comparison.csv` plus a stacked history.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver failure or no
//! convergence, 4 I/O error.

pub mod config;
pub mod output;
pub mod run;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use lyapkit::adi::ShiftSource;
use lyapkit::linops::mmio::write_dense;
use lyapkit::report::{Method, SolveReport};
use lyapkit::LyapError;

use config::{Cli, Command, CompareArgs, RunConfig, SolveArgs, OUT_ENV};
use output::{ComparisonRow, Summary};
use run::{load_problem, run_method, Problem};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let env_out = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    match cli.command {
        Command::Solve(args) => cmd_solve(&args, env_out),
        Command::Compare(args) => cmd_compare(&args, env_out),
    }
}

fn config_error(msg: impl std::fmt::Display) -> i32 {
    eprintln!("lyapkit: configuration error: {msg}");
    EXIT_CONFIG
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> i32 {
    eprintln!("lyapkit: IoError: {}: {e}", path.display());
    EXIT_IO
}

/// Exit code for an error raised while loading or solving.
fn error_exit(e: &LyapError) -> i32 {
    let code = match e {
        LyapError::Io { .. } | LyapError::Parse { .. } => EXIT_IO,
        LyapError::InvalidArgument(_) | LyapError::DimensionMismatch(_) | LyapError::InvalidSparse(_) => EXIT_CONFIG,
        _ => EXIT_SOLVER,
    };
    eprintln!("lyapkit: {}: {e}", e.diagnostic());
    code
}

fn not_converged(report: &SolveReport) -> i32 {
    let diag = match report.status {
        lyapkit::report::SolveStatus::MaxSpaceReached => "MaxSpaceReached",
        _ => "MaxIterReached",
    };
    eprintln!(
        "lyapkit: {diag}: {} stopped at relative residual {:e}",
        report.method.name(),
        report.final_resnorm_rel()
    );
    EXIT_SOLVER
}

fn check_space(cfg: &RunConfig, problem: &Problem) -> Result<(), String> {
    if cfg.method != Method::Lradi && cfg.max_steps(problem.q) == 0 {
        return Err(format!("max_space {} is below 2q = {}", cfg.max_space, 2 * problem.q));
    }
    Ok(())
}

fn write_run(dir: &Path, cfg: &RunConfig, problem: &Problem, z: &nalgebra::DMatrix<f64>, report: &SolveReport, save_z: bool) -> Result<(), i32> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let path = dir.join(output::HISTORY_FILE);
    output::write_history(&path, report).map_err(|e| io_error(&path, e))?;
    let path = dir.join(output::SUMMARY_FILE);
    let summary = Summary::new(cfg, report, problem.n, problem.q, z.ncols());
    output::write_json(&path, &summary).map_err(|e| io_error(&path, e))?;
    if cfg.method.uses_shifts() {
        let path = dir.join(output::SHIFTS_FILE);
        output::write_json(&path, &output::shifts_json(&report.shifts)).map_err(|e| io_error(&path, e))?;
    }
    if save_z {
        let path = dir.join(output::Z_FILE);
        write_dense(&path, z).map_err(|e| error_exit(&e))?;
    }
    Ok(())
}

pub fn cmd_solve(args: &SolveArgs, env_out: Option<PathBuf>) -> i32 {
    let cfg = args.common.to_config(args.method, env_out);
    if let Err(msg) = cfg.validate() {
        return config_error(msg);
    }
    let problem = match load_problem(&cfg.problem, cfg.seed) {
        Ok(p) => p,
        Err(e) => return error_exit(&e),
    };
    if let Err(msg) = check_space(&cfg, &problem) {
        return config_error(msg);
    }
    let (z, report) = match run_method(&problem, &cfg, ShiftSource::Online(cfg.shifts.build())) {
        Ok(r) => r,
        Err(e) => return error_exit(&e),
    };
    for w in &report.warnings {
        log::warn!("{w}");
    }
    if let Err(code) = write_run(&cfg.out_dir, &cfg, &problem, &z, &report, args.save_z) {
        return code;
    }
    if !report.converged() {
        return not_converged(&report);
    }
    EXIT_OK
}

fn row_for(cfg: &RunConfig, report: &SolveReport) -> ComparisonRow {
    ComparisonRow {
        method: cfg.method.name().into(),
        shifts: if cfg.method.uses_shifts() { cfg.shifts.name().into() } else { String::new() },
        status: report.status.name().into(),
        iterations: Some(report.iterations),
        space_dim: Some(report.space_dim),
        final_resnorm_rel: Some(report.final_resnorm_rel()),
        num_shifts: cfg.method.uses_shifts().then_some(report.shifts.len()),
        wall_time_s: Some(report.wall_time.as_secs_f64()),
        failed: false,
    }
}

pub fn cmd_compare(args: &CompareArgs, env_out: Option<PathBuf>) -> i32 {
    if args.methods.len() < 2 {
        return config_error("compare needs at least two methods");
    }
    for (i, m) in args.methods.iter().enumerate() {
        if args.methods[..i].contains(m) {
            return config_error(format!("method {m} listed twice"));
        }
    }
    if args.shared_shifts && !args.methods[0].uses_shifts() {
        return config_error(format!("shared shifts are recorded from the first method, and {} uses none", args.methods[0]));
    }
    let cfgs: Vec<RunConfig> = args.methods.iter().map(|&m| args.common.to_config(m, env_out.clone())).collect();
    if let Err(msg) = cfgs[0].validate() {
        return config_error(msg);
    }
    let problem = match load_problem(&cfgs[0].problem, cfgs[0].seed) {
        Ok(p) => p,
        Err(e) => return error_exit(&e),
    };
    for cfg in &cfgs {
        if let Err(msg) = check_space(cfg, &problem) {
            return config_error(msg);
        }
    }
    let out = cfgs[0].out_dir.clone();
    if let Err(e) = fs::create_dir_all(&out) {
        return io_error(&out, e);
    }

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut recorded: Option<Vec<num_complex::Complex64>> = None;
    let mut failure = None;
    for cfg in &cfgs {
        let shifts = match (&recorded, cfg.method.uses_shifts()) {
            (Some(list), true) => ShiftSource::Replay(list.clone()),
            _ => ShiftSource::Online(cfg.shifts.build()),
        };
        match run_method(&problem, cfg, shifts) {
            Ok((z, report)) => {
                if let Err(code) = write_run(&out.join(cfg.method.name()), cfg, &problem, &z, &report, false) {
                    return code;
                }
                if args.shared_shifts && recorded.is_none() {
                    let path = out.join(output::SHIFTS_FILE);
                    if let Err(e) = output::write_json(&path, &output::shifts_json(&report.shifts)) {
                        return io_error(&path, e);
                    }
                    recorded = Some(report.shifts.clone());
                }
                rows.push(row_for(cfg, &report));
                reports.push(report);
            }
            Err(e) => {
                rows.push(ComparisonRow {
                    method: cfg.method.name().into(),
                    shifts: if cfg.method.uses_shifts() { cfg.shifts.name().into() } else { String::new() },
                    status: e.diagnostic().into(),
                    iterations: None,
                    space_dim: None,
                    final_resnorm_rel: None,
                    num_shifts: None,
                    wall_time_s: None,
                    failed: true,
                });
                failure = Some(e);
                break;
            }
        }
    }
    let path = out.join(output::COMPARISON_FILE);
    if let Err(e) = output::write_comparison(&path, &rows) {
        return io_error(&path, e);
    }
    let path = out.join(output::COMPARISON_HISTORY_FILE);
    if let Err(e) = output::write_comparison_history(&path, &reports.iter().collect::<Vec<_>>()) {
        return io_error(&path, e);
    }
    if let Some(e) = failure {
        return error_exit(&e);
    }
    if let Some(r) = reports.iter().find(|r| !r.converged()) {
        return not_converged(r);
    }
    EXIT_OK
}
