//! Run configuration and its command-line form.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use lyapkit::kadi::{InnerTol, InnerTolerance};
use lyapkit::report::Method;
use lyapkit::shifts::ShiftStrategyKind;
use serde_json::{json, Value};

pub const OUT_ENV: &str = "LYAPKIT_OUT";

/// Where the matrices come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    MatrixMarket { a: PathBuf, e: Option<PathBuf>, b: PathBuf },
    Laplacian2d { h: usize, q: usize },
    Convdiff3d { h: usize, zeta: f64 },
}

fn parse_params(kind: &str, body: &str, names: &[&str]) -> Result<Vec<String>, String> {
    let parts: Vec<&str> = body.split(',').map(str::trim).collect();
    if parts.len() != names.len() {
        return Err(format!("{kind} expects {} parameters ({})", names.len(), names.join(",")));
    }
    parts
        .iter()
        .zip(names)
        .map(|(part, name)| match part.split_once('=') {
            Some((key, value)) if key.trim() == *name => Ok(value.trim().to_string()),
            Some((key, _)) => Err(format!("{kind}: unexpected parameter '{key}', expected '{name}'")),
            None => Ok(part.to_string()),
        })
        .collect()
}

impl FromStr for ProblemSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, body) = s.split_once(':').ok_or_else(|| format!("problem '{s}' lacks a ':'"))?;
        match kind {
            "mm" => {
                let parts: Vec<&str> = body.split(',').collect();
                if parts.iter().any(|p| p.is_empty()) {
                    return Err("mm: empty path".into());
                }
                match parts.as_slice() {
                    [a, b] => Ok(ProblemSpec::MatrixMarket { a: a.into(), e: None, b: b.into() }),
                    [a, e, b] => Ok(ProblemSpec::MatrixMarket { a: a.into(), e: Some(e.into()), b: b.into() }),
                    _ => Err("mm expects <A>[,<E>],<B>".into()),
                }
            }
            "laplacian2d" => {
                let v = parse_params(kind, body, &["h", "q"])?;
                let h = v[0].parse().map_err(|_| format!("laplacian2d: bad h '{}'", v[0]))?;
                let q = v[1].parse().map_err(|_| format!("laplacian2d: bad q '{}'", v[1]))?;
                if h < 2 || q < 1 {
                    return Err("laplacian2d needs h >= 2 and q >= 1".into());
                }
                Ok(ProblemSpec::Laplacian2d { h, q })
            }
            "convdiff3d" => {
                let v = parse_params(kind, body, &["h", "zeta"])?;
                let h = v[0].parse().map_err(|_| format!("convdiff3d: bad h '{}'", v[0]))?;
                let zeta: f64 = v[1].parse().map_err(|_| format!("convdiff3d: bad zeta '{}'", v[1]))?;
                if h < 3 || !(zeta > 0.0 && zeta.is_finite()) {
                    return Err("convdiff3d needs h >= 3 and zeta > 0".into());
                }
                Ok(ProblemSpec::Convdiff3d { h, zeta })
            }
            other => Err(format!("unknown problem kind '{other}'")),
        }
    }
}

impl fmt::Display for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemSpec::MatrixMarket { a, e: None, b } => write!(f, "mm:{},{}", a.display(), b.display()),
            ProblemSpec::MatrixMarket { a, e: Some(e), b } => {
                write!(f, "mm:{},{},{}", a.display(), e.display(), b.display())
            }
            ProblemSpec::Laplacian2d { h, q } => write!(f, "laplacian2d:h={h},q={q}"),
            ProblemSpec::Convdiff3d { h, zeta } => write!(f, "convdiff3d:h={h},zeta={zeta}"),
        }
    }
}

/// One solver configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub method: Method,
    pub shifts: ShiftStrategyKind,
    pub eps_out: f64,
    pub inner_tol: InnerTol,
    pub max_iter: usize,
    /// Maximum basis dimension for the projection methods.
    pub max_space: usize,
    pub problem: ProblemSpec,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.eps_out > 0.0 && self.eps_out.is_finite()) {
            return Err(format!("eps_out must be positive, got {}", self.eps_out));
        }
        if self.max_space < 2 {
            return Err("max_space must be at least 2".into());
        }
        Ok(())
    }

    /// Basis steps allowed for block width `q`.
    pub fn max_steps(&self, q: usize) -> usize {
        self.max_space / (2 * q)
    }

    pub fn echo(&self) -> Value {
        json!({
            "method": self.method.name(),
            "shifts": if self.method.uses_shifts() { Value::from(self.shifts.name()) } else { Value::Null },
            "eps_out": self.eps_out,
            "inner_tol": self.inner_tol.describe(),
            "max_iter": self.max_iter,
            "max_space": self.max_space,
            "problem": self.problem.to_string(),
            "seed": self.seed,
            "out_dir": self.out_dir.display().to_string(),
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "lyapkit", version, about = "Low-rank solvers for large Lyapunov equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one problem with one method.
    Solve(SolveArgs),
    /// Run several methods on the same problem and tabulate the results.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// laplacian2d:h,q | convdiff3d:h,zeta | mm:<A>[,<E>],<B>
    #[arg(long)]
    pub problem: ProblemSpec,
    /// hamiltonian | resmin | ritz
    #[arg(long, default_value = "hamiltonian")]
    pub shifts: ShiftStrategyKind,
    #[arg(long = "eps_out", visible_alias = "eps-out", default_value_t = 1e-8)]
    pub eps_out: f64,
    /// fixed:<value> | relaxed (default: fixed at eps_out / 10)
    #[arg(long = "inner_tol", visible_alias = "inner-tol")]
    pub inner_tol: Option<InnerTol>,
    #[arg(long = "max_iter", visible_alias = "max-iter", default_value_t = 100)]
    pub max_iter: usize,
    /// Largest basis dimension for kadi-g, kadi-mr and kpik.
    #[arg(long = "max_space", visible_alias = "max-space", default_value_t = 400)]
    pub max_space: usize,
    /// Seed for random right-hand sides.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; LYAPKIT_OUT takes precedence when set.
    #[arg(long = "out_dir", visible_alias = "out-dir", default_value = "lyapkit-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// lradi | kadi-g | kadi-mr | kpik
    #[arg(long, default_value = "kadi-g")]
    pub method: Method,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Also write the factor Z as a dense Matrix Market file.
    #[arg(long = "save_z", visible_alias = "save-z")]
    pub save_z: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Comma-separated methods, e.g. kadi-g,lradi,kpik.
    #[arg(long, value_delimiter = ',', required = true)]
    pub methods: Vec<Method>,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Replay the shifts of the first method into the others.
    #[arg(long = "shared_shifts", visible_alias = "shared-shifts")]
    pub shared_shifts: bool,
}

impl CommonArgs {
    /// Resolves defaults and the output-directory override.
    pub fn to_config(&self, method: Method, env_out: Option<PathBuf>) -> RunConfig {
        RunConfig {
            method,
            shifts: self.shifts,
            eps_out: self.eps_out,
            inner_tol: self.inner_tol.unwrap_or(InnerTol::default_fixed(self.eps_out)),
            max_iter: self.max_iter,
            max_space: self.max_space,
            problem: self.problem.clone(),
            seed: self.seed,
            out_dir: env_out.unwrap_or_else(|| self.out_dir.clone()),
        }
    }
}
