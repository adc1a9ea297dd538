//! Classic low-rank ADI with explicit shifted solves.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{LyapError, Result};
use crate::linops::{orth, ShiftedSolver, StableOperator};
use crate::report::{IterationRecord, Method, SolveReport, SolveStatus};
use crate::shifts::{hamiltonian_shift, ShiftContext, ShiftProposal, ShiftStrategy};

/// Columns of `Z` (in blocks of `q`) used, together with `W`, to build the
/// projection for online shifts.
const PROJECTION_BLOCKS: usize = 8;

/// Where the shifts come from.
pub enum ShiftSource {
    /// Fixed sequence, cycled when exhausted. A complex entry stands for its
    /// conjugate pair; an immediately following conjugate entry is skipped.
    Replay(Vec<Complex64>),
    /// Computed on the fly from a small projection of `A` and `W`.
    Online(Box<dyn ShiftStrategy>),
}

/// Reads a replay list one shift group at a time.
#[derive(Debug, Clone)]
pub struct ReplayCursor {
    shifts: Vec<Complex64>,
    pos: usize,
}

impl ReplayCursor {
    pub fn new(shifts: Vec<Complex64>) -> Result<Self> {
        if shifts.is_empty() {
            return Err(LyapError::InvalidArgument("empty shift replay list".into()));
        }
        Ok(Self { shifts, pos: 0 })
    }

    pub fn next_proposal(&mut self) -> ShiftProposal {
        let len = self.shifts.len();
        let p = self.shifts[self.pos % len];
        self.pos += 1;
        if p.im != 0.0 && self.pos % len != 0 && self.shifts[self.pos % len] == p.conj() {
            self.pos += 1;
        }
        let p = if p.im < 0.0 { p.conj() } else { p };
        ShiftProposal { p, is_pair: p.im != 0.0, fallback: false }
    }
}

pub(crate) fn check_stable(p: Complex64) -> Result<()> {
    if p.re < 0.0 && p.is_finite() {
        Ok(())
    } else {
        Err(LyapError::UnstableShift { re: p.re, im: p.im })
    }
}

/// Explicit ADI iterate.
#[derive(Debug, Clone)]
pub struct AdiState {
    pub z: DMatrix<f64>,
    pub w: DMatrix<f64>,
    /// Shift applications so far.
    pub j: usize,
    /// `‖BᵀB‖_F`.
    pub nu: f64,
}

impl AdiState {
    pub fn new(b: &DMatrix<f64>) -> Self {
        Self {
            z: DMatrix::zeros(b.nrows(), 0),
            w: b.clone(),
            j: 0,
            nu: (b.transpose() * b).norm(),
        }
    }

    /// `‖WᵀW‖_F`, the Lyapunov residual norm of `ZZᵀ`.
    pub fn resnorm(&self) -> f64 {
        (self.w.transpose() * &self.w).norm()
    }

    fn append(&mut self, cols: &DMatrix<f64>) {
        let k = self.z.ncols();
        let mut z = DMatrix::zeros(self.z.nrows(), k + cols.ncols());
        z.columns_mut(0, k).copy_from(&self.z);
        z.columns_mut(k, cols.ncols()).copy_from(cols);
        self.z = z;
    }

    /// One real shift: `W ← W − 2p S`, `Z ← [Z, √(−2p) S]`.
    pub fn step_real(&mut self, solver: &dyn ShiftedSolver) -> Result<()> {
        let p = solver.shift();
        check_stable(p)?;
        if p.im != 0.0 {
            return Err(LyapError::InvalidArgument("step_real needs a real shift".into()));
        }
        let s = solver.solve(&self.w).map(|z| z.re);
        self.w -= &s * (2.0 * p.re);
        self.append(&(s * (-2.0 * p.re).sqrt()));
        self.j += 1;
        Ok(())
    }

    /// The pair `p, conj(p)` in real arithmetic.
    pub fn step_complex_pair(&mut self, solver: &dyn ShiftedSolver) -> Result<()> {
        let p = solver.shift();
        check_stable(p)?;
        if p.im == 0.0 {
            return Err(LyapError::InvalidArgument("step_complex_pair needs Im(p) != 0".into()));
        }
        let s = solver.solve(&self.w);
        let beta = p.re / p.im;
        let re = s.map(|z| z.re);
        let im = s.map(|z| z.im);
        let comb = &re + &im * beta;
        self.w -= &comb * (4.0 * p.re);
        let g = (-2.0 * p.re).sqrt();
        let q = self.w.ncols();
        let mut cols = DMatrix::zeros(self.w.nrows(), 2 * q);
        cols.columns_mut(0, q).copy_from(&(comb * (g * 2f64.sqrt())));
        cols.columns_mut(q, q).copy_from(&(im * (g * (2.0 * (beta * beta + 1.0)).sqrt())));
        self.append(&cols);
        self.j += 2;
        Ok(())
    }
}

/// Stopping and size parameters.
#[derive(Debug, Clone, Copy)]
pub struct AdiOptions {
    /// Relative tolerance on `‖WᵀW‖_F / ‖BᵀB‖_F`.
    pub eps: f64,
    /// Maximum number of shift applications.
    pub max_iter: usize,
}

impl Default for AdiOptions {
    fn default() -> Self {
        Self { eps: 1e-8, max_iter: 100 }
    }
}

fn shift_key(p: Complex64) -> (u64, u64) {
    (p.re.to_bits(), p.im.to_bits())
}

/// Projection space for online shifts: `[B, A⁻¹B]` before the first step,
/// then the most recent columns of `Z` together with `W`.
fn online_context(op: &dyn StableOperator, b: &DMatrix<f64>, state: &AdiState) -> (DMatrix<f64>, DMatrix<f64>) {
    let q = b.ncols();
    let basis = if state.j == 0 {
        let mut x = DMatrix::zeros(b.nrows(), 2 * q);
        x.columns_mut(0, q).copy_from(b);
        x.columns_mut(q, q).copy_from(&op.inv_apply(b));
        orth(&x)
    } else {
        let take = state.z.ncols().min(PROJECTION_BLOCKS * q);
        let mut x = DMatrix::zeros(b.nrows(), take + q);
        x.columns_mut(0, take).copy_from(&state.z.columns(state.z.ncols() - take, take));
        x.columns_mut(take, q).copy_from(&state.w);
        orth(&x)
    };
    let t = basis.transpose() * op.apply(&basis);
    let ups = basis.transpose() * &state.w;
    (t, ups)
}

/// Runs LR-ADI until `‖WᵀW‖_F < eps ‖BᵀB‖_F` or `max_iter` shift applications.
pub fn adi_run(
    op: &dyn StableOperator,
    b: &DMatrix<f64>,
    shifts: ShiftSource,
    opts: AdiOptions,
) -> Result<(DMatrix<f64>, SolveReport)> {
    adi_run_observed(op, b, shifts, opts, &mut |_| {})
}

/// As [`adi_run`], calling `observer` after every step group.
pub fn adi_run_observed(
    op: &dyn StableOperator,
    b: &DMatrix<f64>,
    shifts: ShiftSource,
    opts: AdiOptions,
    observer: &mut dyn FnMut(&AdiState),
) -> Result<(DMatrix<f64>, SolveReport)> {
    let start = Instant::now();
    if b.nrows() != op.dim() {
        return Err(LyapError::DimensionMismatch(format!("B has {} rows, operator dimension {}", b.nrows(), op.dim())));
    }
    if !(opts.eps > 0.0) {
        return Err(LyapError::InvalidArgument("eps must be positive".into()));
    }
    let mut state = AdiState::new(b);
    let mut report = SolveReport::new(Method::Lradi, state.nu);
    let record = |state: &AdiState, shift: Option<Complex64>| {
        let r = state.resnorm();
        IterationRecord {
            j: state.j,
            m: 0,
            space_dim: state.z.ncols(),
            resnorm_abs: r,
            resnorm_rel: if state.nu > 0.0 { r / state.nu } else { 0.0 },
            shift,
            eps_inn: None,
        }
    };
    report.push(record(&state, None));

    let (mut replay, mut strategy) = match shifts {
        ShiftSource::Replay(list) => (Some(ReplayCursor::new(list)?), None),
        ShiftSource::Online(s) => (None, Some(s)),
    };
    let mut cache: HashMap<(u64, u64), Box<dyn ShiftedSolver>> = HashMap::new();

    report.status = loop {
        if state.resnorm() < opts.eps * state.nu {
            break SolveStatus::Converged;
        }
        if state.j >= opts.max_iter {
            break SolveStatus::MaxIterReached;
        }
        let proposal = match (&mut replay, &mut strategy) {
            (Some(cursor), _) => cursor.next_proposal(),
            (None, Some(strategy)) => {
                let (t, ups) = online_context(op, b, &state);
                let ctx = ShiftContext::new(&t, &ups)?;
                if state.j == 0 {
                    hamiltonian_shift(&ctx)?
                } else {
                    strategy.propose(&ctx)?
                }
            }
            (None, None) => unreachable!(),
        };
        if proposal.fallback {
            report.warnings.push(format!("step {}: reflected Ritz value used as shift", state.j + 1));
        }
        let p = proposal.p;
        check_stable(p)?;
        let key = shift_key(p);
        if !cache.contains_key(&key) {
            cache.insert(key, op.shifted_solver(p)?);
        }
        let solver = cache[&key].as_ref();
        if proposal.is_pair {
            state.step_complex_pair(solver)?;
            report.shifts.extend([p, p.conj()]);
        } else {
            state.step_real(solver)?;
            report.shifts.push(p);
        }
        report.push(record(&state, Some(p)));
        observer(&state);
    };
    report.space_dim = state.z.ncols();
    report.wall_time = start.elapsed();
    Ok((state.z, report))
}
