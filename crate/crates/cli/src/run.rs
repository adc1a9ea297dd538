//! Problem loading and solver dispatch.

use nalgebra::DMatrix;
use lyapkit::adi::{adi_run, AdiOptions, ShiftSource};
use lyapkit::kadi::{kadi_run, KadiOptions};
use lyapkit::linops::mmio::{read_dense, read_sparse};
use lyapkit::linops::{CongruenceOperator, SparseOperator, StableOperator};
use lyapkit::report::{Method, SolveReport};
use lyapkit::shiftsolve::Projection;
use lyapkit::testlab::{gen_convdiff3d, gen_laplacian2d, transform_chol_e, transform_diag_e, BKind};
use lyapkit::{LyapError, Result};

use crate::config::{ProblemSpec, RunConfig};

enum Operator {
    Plain(SparseOperator),
    /// Mass matrix folded in; results are mapped back.
    Congruence(CongruenceOperator),
}

/// A loaded problem ready to solve: `op` and `b` are the (possibly
/// transformed) data the solvers see.
pub struct Problem {
    op: Operator,
    pub b: DMatrix<f64>,
    pub n: usize,
    pub q: usize,
}

impl Problem {
    pub fn operator(&self) -> &dyn StableOperator {
        match &self.op {
            Operator::Plain(op) => op,
            Operator::Congruence(op) => op,
        }
    }

    /// Maps a factor of the solved equation back to the original one.
    pub fn back_map(&self, z: DMatrix<f64>) -> DMatrix<f64> {
        match &self.op {
            Operator::Plain(_) => z,
            Operator::Congruence(op) => op.back_map(&z),
        }
    }

    pub fn has_mass(&self) -> bool {
        matches!(self.op, Operator::Congruence(_))
    }
}

pub fn load_problem(spec: &ProblemSpec, seed: u64) -> Result<Problem> {
    let (op, b) = match spec {
        ProblemSpec::Laplacian2d { h, q } => {
            let p = gen_laplacian2d(*h, *q, BKind::Random(seed))?;
            (Operator::Plain(SparseOperator::new(p.a)?), p.b)
        }
        ProblemSpec::Convdiff3d { h, zeta } => {
            let p = gen_convdiff3d(*h, *zeta, seed)?;
            (Operator::Plain(SparseOperator::new(p.a)?), p.b)
        }
        ProblemSpec::MatrixMarket { a, e, b } => {
            let a = read_sparse(a)?;
            let b = read_dense(b)?;
            if b.nrows() != a.nrows() {
                return Err(LyapError::DimensionMismatch(format!("B has {} rows, A is {}x{}", b.nrows(), a.nrows(), a.ncols())));
            }
            match e {
                None => (Operator::Plain(SparseOperator::new(a)?), b),
                Some(e) => {
                    let e = read_sparse(e)?;
                    let is_diagonal = e.triplets().iter().all(|&(r, c, v)| r == c || v == 0.0);
                    let (op, bt) = if is_diagonal && e.nrows() == e.ncols() {
                        transform_diag_e(a, &e.diagonal(), &b)?
                    } else {
                        transform_chol_e(a, e, &b)?
                    };
                    (Operator::Congruence(op), bt)
                }
            }
        }
    };
    let (n, q) = b.shape();
    Ok(Problem { op, b, n, q })
}

/// Runs `cfg.method`; the returned factor solves the original equation.
pub fn run_method(problem: &Problem, cfg: &RunConfig, shifts: ShiftSource) -> Result<(DMatrix<f64>, SolveReport)> {
    let op = problem.operator();
    let b = &problem.b;
    let steps = cfg.max_steps(problem.q);
    if cfg.method != Method::Lradi && steps == 0 {
        return Err(LyapError::InvalidArgument(format!("max_space {} is below 2q = {}", cfg.max_space, 2 * problem.q)));
    }
    let kadi = |projection| KadiOptions {
        projection,
        eps_out: cfg.eps_out,
        inner_tol: cfg.inner_tol,
        max_steps: steps,
        max_iter: cfg.max_iter,
    };
    let (z, report) = match cfg.method {
        Method::Lradi => adi_run(op, b, shifts, AdiOptions { eps: cfg.eps_out, max_iter: cfg.max_iter })?,
        Method::KadiGalerkin => kadi_run(op, b, shifts, kadi(Projection::Galerkin))?,
        Method::KadiMinRes => kadi_run(op, b, shifts, kadi(Projection::MinRes))?,
        Method::Kpik => lyapkit::testlab::kpik_solve(op, b, cfg.eps_out, steps)?,
    };
    Ok((problem.back_map(z), report))
}
