//! LR-ADI carried out implicitly on one growing extended Krylov basis.
//!
//! Each shifted solve `(A + pI) S = W_{j-1}` is replaced by a projected solve
//! on the current basis. Since `W_j = V Υ_j` stays in the space, the whole
//! iteration runs on the small factor `Υ_j`, and `Z` is only formed at the end.

use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::adi::{check_stable, ReplayCursor, ShiftSource};
use crate::error::{LyapError, Result};
use crate::linops::{CMatrix, StableOperator};
use crate::report::{IterationRecord, Method, SolveReport, SolveStatus};
use crate::shiftsolve::{projected_solve, ProjectedSolve, Projection};
use crate::shifts::{initial_shift, ShiftContext, ShiftProposal};
use crate::xkrylov::{ExtendedKrylovBasis, NextBlock};

/// Schedule for the inner tolerance `ε_inn^(j)`, compared against the
/// absolute projected residual norm.
pub trait InnerTolerance: Send + Sync {
    fn describe(&self) -> String;

    /// `prev` is `‖Υ_{j-1}ᵀ Υ_{j-1}‖_F`.
    fn tolerance(&self, eps_out: f64, nu: f64, prev: f64) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerTol {
    /// The same absolute tolerance for every shift.
    Fixed(f64),
    /// `min(eps_max, ε_out ν / max(‖Υ_{j-1}ᵀΥ_{j-1}‖_F, ε_out ν))`.
    Relaxed { eps_max: f64 },
}

impl InnerTol {
    /// `0.1 ε_out`.
    pub fn default_fixed(eps_out: f64) -> Self {
        InnerTol::Fixed(0.1 * eps_out)
    }

    pub fn relaxed() -> Self {
        InnerTol::Relaxed { eps_max: 1e-2 }
    }
}

impl InnerTolerance for InnerTol {
    fn describe(&self) -> String {
        match self {
            InnerTol::Fixed(v) => format!("fixed:{v:e}"),
            InnerTol::Relaxed { .. } => "relaxed".into(),
        }
    }

    fn tolerance(&self, eps_out: f64, nu: f64, prev: f64) -> f64 {
        match *self {
            InnerTol::Fixed(v) => v,
            InnerTol::Relaxed { eps_max } => {
                let floor = eps_out * nu;
                eps_max.min(floor / prev.max(floor))
            }
        }
    }
}

impl FromStr for InnerTol {
    type Err = LyapError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "relaxed" {
            return Ok(InnerTol::relaxed());
        }
        let value = s
            .strip_prefix("fixed:")
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|v| *v > 0.0 && v.is_finite())
            .ok_or_else(|| LyapError::InvalidArgument(format!("bad inner tolerance '{s}'")))?;
        Ok(InnerTol::Fixed(value))
    }
}

/// Role of a stored coefficient block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Real,
    /// `√2 (Re Y + β Im Y)`.
    PairFirst,
    /// `√(2(β² + 1)) Im Y`.
    PairSecond,
}

/// One accepted inner solution, real and stored at its own dimension.
#[derive(Debug, Clone)]
pub struct StackEntry {
    /// Basis steps in use when the block was accepted.
    pub m: usize,
    pub y: DMatrix<f64>,
    /// The shift (for a pair, the member with `Im > 0`).
    pub p: Complex64,
    pub kind: BlockKind,
}

/// Implicit ADI iterate.
#[derive(Debug, Clone)]
pub struct KadiState {
    /// `Υ_j` with `W_j = V [Υ_j; 0]`.
    pub upsilon: DMatrix<f64>,
    pub stack: Vec<StackEntry>,
    /// Shift applications so far.
    pub j: usize,
    /// `‖BᵀB‖_F`.
    pub nu: f64,
}

impl KadiState {
    /// `Υ₀ = E₁γ`.
    pub fn new(basis: &ExtendedKrylovBasis<'_>) -> Self {
        let upsilon = basis.e1_gamma(basis.dim());
        let nu = (upsilon.transpose() * &upsilon).norm();
        Self { upsilon, stack: Vec::new(), j: 0, nu }
    }

    /// `Υ_{j-1}` padded to the current basis dimension.
    pub fn padded_upsilon(&self, rows: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows, self.upsilon.ncols());
        out.rows_mut(0, self.upsilon.nrows()).copy_from(&self.upsilon);
        out
    }

    /// `‖Υᵀ Υ‖_F`, equal to `‖W_jᵀ W_j‖_F`.
    pub fn lyap_resnorm(&self) -> f64 {
        (self.upsilon.transpose() * &self.upsilon).norm()
    }

    /// Projected solve for `p` at the current basis size; accepted when the
    /// residual norm is at most `eps_inn`.
    pub fn try_next_shift_without_expand(
        &self,
        basis: &ExtendedKrylovBasis<'_>,
        kind: Projection,
        p: Complex64,
        eps_inn: f64,
    ) -> Result<(bool, ProjectedSolve)> {
        let sol = projected_solve(kind, basis, p, &self.upsilon)?;
        Ok((sol.resnorm <= eps_inn, sol))
    }

    /// `Υ_j = Υ_{j-1} − 2p Y` for a real shift.
    pub fn inner_accept_real(&mut self, m: usize, p: f64, y: &DMatrix<f64>) -> Result<()> {
        check_stable(Complex64::new(p, 0.0))?;
        let mut ups = self.padded_upsilon(y.nrows());
        ups -= y * (2.0 * p);
        self.upsilon = ups;
        self.stack.push(StackEntry { m, y: y.clone(), p: Complex64::new(p, 0.0), kind: BlockKind::Real });
        self.j += 1;
        Ok(())
    }

    /// The pair `p, conj(p)`: `Υ_{j+1} = Υ_{j-1} − 4 Re(p) (Re Y + β Im Y)`.
    pub fn inner_accept_complex_pair(&mut self, m: usize, p: Complex64, y: &CMatrix) -> Result<()> {
        check_stable(p)?;
        if p.im == 0.0 {
            return Err(LyapError::InvalidArgument("complex pair needs Im(p) != 0".into()));
        }
        let beta = p.re / p.im;
        let re = y.map(|z| z.re);
        let im = y.map(|z| z.im);
        let comb = &re + &im * beta;
        let mut ups = self.padded_upsilon(y.nrows());
        ups -= &comb * (4.0 * p.re);
        self.upsilon = ups;
        let p = if p.im < 0.0 { p.conj() } else { p };
        self.stack.push(StackEntry { m, y: comb * 2f64.sqrt(), p, kind: BlockKind::PairFirst });
        self.stack.push(StackEntry {
            m,
            y: im * (2.0 * (beta * beta + 1.0)).sqrt(),
            p,
            kind: BlockKind::PairSecond,
        });
        self.j += 2;
        Ok(())
    }

    /// Stacked coefficient blocks padded to `rows`, scaled by `√(−2 Re p)`.
    pub fn scaled_coefficients(&self, rows: usize) -> DMatrix<f64> {
        let q = self.upsilon.ncols();
        let mut y = DMatrix::zeros(rows, q * self.stack.len());
        for (i, e) in self.stack.iter().enumerate() {
            let w = (-2.0 * e.p.re).sqrt();
            y.view_mut((0, i * q), (e.y.nrows(), q)).copy_from(&(&e.y * w));
        }
        y
    }

    /// `Z = V [Y₁ … Y_j] (√(−2 diag Re p) ⊗ I_q)`.
    pub fn assemble_z(&self, basis: &ExtendedKrylovBasis<'_>) -> DMatrix<f64> {
        if self.stack.is_empty() {
            return DMatrix::zeros(basis.n(), 0);
        }
        basis.v() * self.scaled_coefficients(basis.dim())
    }
}

/// Settings for [`kadi_run`].
#[derive(Debug, Clone, Copy)]
pub struct KadiOptions {
    pub projection: Projection,
    /// Relative tolerance on `‖ΥᵀΥ‖_F / ν`.
    pub eps_out: f64,
    pub inner_tol: InnerTol,
    /// Maximum number of basis steps `m` (dimension `2qm`).
    pub max_steps: usize,
    /// Maximum number of shift applications.
    pub max_iter: usize,
}

impl Default for KadiOptions {
    fn default() -> Self {
        Self {
            projection: Projection::Galerkin,
            eps_out: 1e-8,
            inner_tol: InnerTol::default_fixed(1e-8),
            max_steps: 200,
            max_iter: 200,
        }
    }
}

/// What the observer sees after each accepted shift.
pub struct KadiProgress<'s, 'b> {
    pub basis: &'s ExtendedKrylovBasis<'b>,
    pub state: &'s KadiState,
}

pub fn kadi_run(
    op: &dyn StableOperator,
    b: &DMatrix<f64>,
    shifts: ShiftSource,
    opts: KadiOptions,
) -> Result<(DMatrix<f64>, SolveReport)> {
    kadi_run_observed(op, b, shifts, opts, &mut |_| {})
}

/// As [`kadi_run`], calling `observer` after every accepted shift.
pub fn kadi_run_observed(
    op: &dyn StableOperator,
    b: &DMatrix<f64>,
    shifts: ShiftSource,
    opts: KadiOptions,
    observer: &mut dyn FnMut(KadiProgress<'_, '_>),
) -> Result<(DMatrix<f64>, SolveReport)> {
    let start = Instant::now();
    let method = match opts.projection {
        Projection::Galerkin => Method::KadiGalerkin,
        Projection::MinRes => Method::KadiMinRes,
    };
    if b.nrows() != op.dim() {
        return Err(LyapError::DimensionMismatch(format!("B has {} rows, operator dimension {}", b.nrows(), op.dim())));
    }
    if !(opts.eps_out > 0.0) {
        return Err(LyapError::InvalidArgument("eps_out must be positive".into()));
    }
    let nu = (b.transpose() * b).norm();
    let mut report = SolveReport::new(method, nu);
    let empty = |report: &mut SolveReport, status| {
        report.status = status;
        report.push(IterationRecord {
            j: 0,
            m: 0,
            space_dim: 0,
            resnorm_abs: nu,
            resnorm_rel: if nu > 0.0 { 1.0 } else { 0.0 },
            shift: None,
            eps_inn: None,
        });
    };
    if nu * opts.eps_out >= nu {
        empty(&mut report, SolveStatus::Converged);
        report.wall_time = start.elapsed();
        return Ok((DMatrix::zeros(b.nrows(), 0), report));
    }
    if opts.max_iter == 0 || opts.max_steps == 0 {
        empty(&mut report, SolveStatus::MaxIterReached);
        report.wall_time = start.elapsed();
        return Ok((DMatrix::zeros(b.nrows(), 0), report));
    }

    let mut basis = ExtendedKrylovBasis::new(op, b)?;
    let mut state = KadiState::new(&basis);
    state.nu = nu;
    let record = |basis: &ExtendedKrylovBasis<'_>, state: &KadiState, shift, eps_inn| {
        let r = state.lyap_resnorm();
        IterationRecord {
            j: state.j,
            m: basis.steps(),
            space_dim: basis.dim(),
            resnorm_abs: r,
            resnorm_rel: r / nu,
            shift,
            eps_inn,
        }
    };
    report.push(record(&basis, &state, None, None));

    let (mut replay, mut strategy) = match shifts {
        ShiftSource::Replay(list) => (Some(ReplayCursor::new(list)?), None),
        ShiftSource::Online(s) => (None, Some(s)),
    };
    let mut proposal: ShiftProposal = match &mut replay {
        Some(cursor) => cursor.next_proposal(),
        None => initial_shift(&basis)?,
    };

    report.status = 'outer: loop {
        if proposal.fallback {
            report.warnings.push(format!("step {}: reflected Ritz value used as shift", state.j + 1));
        }
        let p = proposal.p;
        check_stable(p)?;
        let eps_inn = opts.inner_tol.tolerance(opts.eps_out, nu, state.lyap_resnorm());
        let sol = loop {
            let (accept, sol) = state.try_next_shift_without_expand(&basis, opts.projection, p, eps_inn)?;
            if accept {
                break sol;
            }
            if basis.next_block() == NextBlock::Exhausted {
                report.warnings.push(format!(
                    "step {}: invariant subspace reached with inner residual {:e} above {:e}",
                    state.j + 1,
                    sol.resnorm,
                    eps_inn
                ));
                break sol;
            }
            if basis.steps() >= opts.max_steps {
                break 'outer SolveStatus::MaxSpaceReached;
            }
            basis.expand()?;
        };
        let m = basis.steps();
        if proposal.is_pair {
            state.inner_accept_complex_pair(m, p, &sol.y)?;
            report.shifts.extend([p, p.conj()]);
        } else {
            state.inner_accept_real(m, p.re, &sol.y.map(|z| z.re))?;
            report.shifts.push(p);
        }
        report.push(record(&basis, &state, Some(p), Some(eps_inn)));
        observer(KadiProgress { basis: &basis, state: &state });

        if state.lyap_resnorm() <= nu * opts.eps_out {
            break SolveStatus::Converged;
        }
        if state.j >= opts.max_iter {
            break SolveStatus::MaxIterReached;
        }
        proposal = match (&mut replay, &mut strategy) {
            (Some(cursor), _) => cursor.next_proposal(),
            (None, Some(strategy)) => {
                let ups = state.padded_upsilon(basis.dim());
                strategy.propose(&ShiftContext::new(basis.t(), &ups)?)?
            }
            (None, None) => unreachable!(),
        };
    };

    let z = state.assemble_z(&basis);
    report.space_dim = basis.dim();
    report.wall_time = start.elapsed();
    Ok((z, report))
}
