//! Per-iteration records and run summaries shared by all solvers.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use num_complex::Complex64;

use crate::error::LyapError;

/// Solver family that produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Lradi,
    KadiGalerkin,
    KadiMinRes,
    Kpik,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lradi => "lradi",
            Method::KadiGalerkin => "kadi-g",
            Method::KadiMinRes => "kadi-mr",
            Method::Kpik => "kpik",
        }
    }

    pub fn uses_shifts(self) -> bool {
        self != Method::Kpik
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = LyapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lradi" => Ok(Method::Lradi),
            "kadi-g" => Ok(Method::KadiGalerkin),
            "kadi-mr" => Ok(Method::KadiMinRes),
            "kpik" => Ok(Method::Kpik),
            other => Err(LyapError::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterReached,
    MaxSpaceReached,
}

impl SolveStatus {
    pub fn name(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterReached => "max_iter_reached",
            SolveStatus::MaxSpaceReached => "max_space_reached",
        }
    }
}

/// One row of the residual history.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// Shift applications so far (a conjugate pair counts twice).
    pub j: usize,
    /// Extended Krylov steps in use (0 for explicit ADI).
    pub m: usize,
    pub space_dim: usize,
    pub resnorm_abs: f64,
    pub resnorm_rel: f64,
    pub shift: Option<Complex64>,
    pub eps_inn: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub method: Method,
    pub status: SolveStatus,
    pub records: Vec<IterationRecord>,
    /// Every consumed shift in order; pairs appear as `p, conj(p)`.
    pub shifts: Vec<Complex64>,
    /// `‖BᵀB‖_F`.
    pub nu: f64,
    pub iterations: usize,
    pub space_dim: usize,
    pub wall_time: Duration,
    pub warnings: Vec<String>,
}

impl SolveReport {
    pub(crate) fn new(method: Method, nu: f64) -> Self {
        Self {
            method,
            status: SolveStatus::MaxIterReached,
            records: Vec::new(),
            shifts: Vec::new(),
            nu,
            iterations: 0,
            space_dim: 0,
            wall_time: Duration::ZERO,
            warnings: Vec::new(),
        }
    }

    pub fn final_resnorm_abs(&self) -> f64 {
        self.records.last().map_or(self.nu, |r| r.resnorm_abs)
    }

    pub fn final_resnorm_rel(&self) -> f64 {
        self.records.last().map_or(1.0, |r| r.resnorm_rel)
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub(crate) fn push(&mut self, rec: IterationRecord) {
        self.iterations = rec.j;
        self.space_dim = rec.space_dim;
        self.records.push(rec);
    }
}
