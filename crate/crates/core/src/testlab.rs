//! Test problems, mass-matrix transforms, small dense oracles and a K-PIK
//! baseline solver.

use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LyapError, Result};
use crate::linops::{complex_schur, dense_eigenvalues, economy_qr, CMatrix, CongruenceOperator, SparseMatrix, StableOperator};
use crate::report::{IterationRecord, Method, SolveReport, SolveStatus};
use crate::xkrylov::{ExtendedKrylovBasis, NextBlock};

/// How the right-hand side of a generated problem is filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BKind {
    /// `𝟙 / ‖𝟙‖_F`.
    Ones,
    /// Uniform entries in `[0, 1)` from a ChaCha8 stream, normalized.
    Random(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemMeta {
    pub generator: &'static str,
    pub h: usize,
    pub zeta: Option<f64>,
    pub q: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct GeneratedProblem {
    pub a: SparseMatrix,
    pub b: DMatrix<f64>,
    pub meta: ProblemMeta,
}

pub fn make_b(n: usize, q: usize, kind: BKind) -> DMatrix<f64> {
    let b = match kind {
        BKind::Ones => DMatrix::from_element(n, q, 1.0),
        BKind::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            DMatrix::from_fn(n, q, |_, _| rng.gen::<f64>())
        }
    };
    let nrm = b.norm();
    if nrm > 0.0 {
        b / nrm
    } else {
        b
    }
}

/// `A = I ⊗ D + D ⊗ I` with `D = tridiag(1, −2, 1)`, `n = h²`.
pub fn gen_laplacian2d(h: usize, q: usize, b_kind: BKind) -> Result<GeneratedProblem> {
    if h < 2 || q == 0 {
        return Err(LyapError::InvalidArgument(format!("laplacian2d needs h >= 2 and q >= 1, got h={h}, q={q}")));
    }
    let d = SparseMatrix::tridiag(h, 1.0, -2.0, 1.0);
    let eye = SparseMatrix::identity(h);
    let a = eye.kron(&d).add(1.0, &d.kron(&eye), 1.0)?;
    Ok(GeneratedProblem {
        b: make_b(h * h, q, b_kind),
        a,
        meta: ProblemMeta {
            generator: "laplacian2d",
            h,
            zeta: None,
            q,
            seed: match b_kind {
                BKind::Random(s) => Some(s),
                BKind::Ones => None,
            },
        },
    })
}

/// Grid coordinates `i / (h − 1)`, `i = 0..h`.
pub fn convdiff_nodes(h: usize) -> Vec<f64> {
    (0..h).map(|i| i as f64 / (h - 1) as f64).collect()
}

/// Centered differences for `−ζΔu + w·∇u` on the unit cube with
/// `w = ((1 − x²) y z, 0, e^z)`, negated so that the result is stable.
/// `x` is the fastest index, `z` the slowest.
pub fn gen_convdiff3d(h: usize, zeta: f64, seed: u64) -> Result<GeneratedProblem> {
    let a = convdiff3d_matrix(h, zeta, true)?;
    Ok(GeneratedProblem {
        b: make_b(h * h * h, 1, BKind::Random(seed)),
        a,
        meta: ProblemMeta { generator: "convdiff3d", h, zeta: Some(zeta), q: 1, seed: Some(seed) },
    })
}

/// Kronecker assembly; `convection = false` drops the first-order terms.
pub fn convdiff3d_matrix(h: usize, zeta: f64, convection: bool) -> Result<SparseMatrix> {
    if h < 3 || !(zeta > 0.0) {
        return Err(LyapError::InvalidArgument(format!("convdiff3d needs h >= 3 and zeta > 0, got h={h}, zeta={zeta}")));
    }
    let s = (h - 1) as f64;
    let nodes = convdiff_nodes(h);
    let d = SparseMatrix::tridiag(h, -1.0, 2.0, -1.0).scale(zeta * s * s);
    let n = SparseMatrix::tridiag(h, -1.0, 0.0, 1.0).scale(-s / 2.0);
    let eye = SparseMatrix::identity(h);
    let diag = |f: &dyn Fn(f64) -> f64| SparseMatrix::from_diagonal(&nodes.iter().map(|&t| f(t)).collect::<Vec<_>>());

    let mut first = d.clone();
    if convection {
        first = first.add(1.0, &diag(&f64::exp).matmul(&n.transpose())?, 1.0)?;
    }
    let mut p = first.kron(&eye).kron(&eye);
    p = p.add(1.0, &eye.kron(&d).kron(&eye), 1.0)?;
    p = p.add(1.0, &eye.kron(&eye).kron(&d), 1.0)?;
    if convection {
        let pi1 = diag(&|z| z);
        let psi1 = diag(&|y| y);
        let phi1_n = diag(&|x| 1.0 - x * x).matmul(&n)?;
        p = p.add(1.0, &pi1.kron(&psi1).kron(&phi1_n), 1.0)?;
    }
    Ok(p.scale(-1.0))
}

/// `Ã = E^{-1/2} A E^{-1/2}`, `B̃ = E^{-1/2} B`. The operator's
/// [`CongruenceOperator::back_map`] recovers `Z`.
pub fn transform_diag_e(a: SparseMatrix, e_diag: &[f64], b: &DMatrix<f64>) -> Result<(CongruenceOperator, DMatrix<f64>)> {
    let op = CongruenceOperator::with_diagonal(a, e_diag)?;
    if b.nrows() != op.dim() {
        return Err(LyapError::DimensionMismatch(format!("B has {} rows, A is {}", b.nrows(), op.dim())));
    }
    let bt = op.transform_rhs(b);
    Ok((op, bt))
}

/// `Ã = L⁻¹ A L⁻ᵀ`, `B̃ = L⁻¹ B` with `E = L Lᵀ`.
pub fn transform_chol_e(a: SparseMatrix, e: SparseMatrix, b: &DMatrix<f64>) -> Result<(CongruenceOperator, DMatrix<f64>)> {
    let op = CongruenceOperator::with_cholesky(a, e)?;
    if b.nrows() != op.dim() {
        return Err(LyapError::DimensionMismatch(format!("B has {} rows, A is {}", b.nrows(), op.dim())));
    }
    let bt = op.transform_rhs(b);
    Ok((op, bt))
}

/// Dense solution of `AX + XAᵀ + BBᵀ = 0`.
///
/// Up to `n = 24` the `n² × n²` Kronecker system is solved directly; larger
/// problems go through a complex Schur form (Bartels–Stewart).
pub fn kron_lyap_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(LyapError::DimensionMismatch(format!("A is {}x{}, B has {} rows", n, a.ncols(), b.nrows())));
    }
    let eig = dense_eigenvalues(a)?;
    if let Some(l) = eig.iter().find(|l| l.re >= 0.0) {
        return Err(LyapError::InvalidArgument(format!("A is not stable (eigenvalue {l})")));
    }
    let c = b * b.transpose();
    let x = if n <= 24 { kron_direct(a, &c)? } else { bartels_stewart(a, &c)? };
    Ok((&x + x.transpose()) * 0.5)
}

fn kron_direct(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = -DMatrix::from_column_slice(n * n, 1, c.as_slice());
    let sol = k.lu().solve(&rhs).ok_or(LyapError::SingularMatrix { row: 0 })?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

// A = U T Uᴴ; solve T Y + Y Tᴴ = −Uᴴ C U column by column from the right.
fn bartels_stewart(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let (u, t) = complex_schur(a)?;
    let cc: CMatrix = c.map(|v| Complex64::new(v, 0.0));
    let f = u.adjoint() * cc * &u;
    let mut y = CMatrix::zeros(n, n);
    for j in (0..n).rev() {
        let mut rhs: Vec<Complex64> = (0..n).map(|i| -f[(i, j)]).collect();
        for k in j + 1..n {
            let w = t[(j, k)].conj();
            if w != Complex64::new(0.0, 0.0) {
                for i in 0..n {
                    rhs[i] -= w * y[(i, k)];
                }
            }
        }
        let shift = t[(j, j)].conj();
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for k in i + 1..n {
                s -= t[(i, k)] * y[(k, j)];
            }
            let piv = t[(i, i)] + shift;
            if piv.norm() == 0.0 {
                return Err(LyapError::SingularMatrix { row: i });
            }
            y[(i, j)] = s / piv;
        }
    }
    let x = &u * y * u.adjoint();
    Ok(x.map(|z| z.re))
}

/// `‖AX + XAᵀ + BBᵀ‖_F / ‖BᵀB‖_F` with `X = ZZᵀ`, all dense.
pub fn dense_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    let x = z * z.transpose();
    let r = a * &x + &x * a.transpose() + b * b.transpose();
    r.norm() / (b.transpose() * b).norm()
}

/// `‖AXEᵀ + EXAᵀ + BBᵀ‖_F / ‖BᵀB‖_F` with `X = ZZᵀ`.
pub fn generalized_residual(a: &DMatrix<f64>, e: &DMatrix<f64>, b: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    let x = z * z.transpose();
    let axe = a * &x * e.transpose();
    let r = &axe + axe.transpose() + b * b.transpose();
    r.norm() / (b.transpose() * b).norm()
}

/// Relative Lyapunov residual without forming `n × n` matrices:
/// `R = F M Fᵀ` with `F = [AZ, Z, B]`, evaluated through a QR of `F`.
pub fn lowrank_residual(op: &dyn StableOperator, b: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    let n = b.nrows();
    let k = z.ncols();
    let q = b.ncols();
    let nu = (b.transpose() * b).norm();
    if k + k + q > n {
        return dense_residual(&op.to_dense(), b, z);
    }
    let az = op.apply(z);
    let mut f = DMatrix::zeros(n, 2 * k + q);
    f.columns_mut(0, k).copy_from(&az);
    f.columns_mut(k, k).copy_from(z);
    f.columns_mut(2 * k, q).copy_from(b);
    let r = economy_qr(&f).r;
    let mut m = DMatrix::zeros(2 * k + q, 2 * k + q);
    for i in 0..k {
        m[(i, k + i)] = 1.0;
        m[(k + i, i)] = 1.0;
    }
    for i in 0..q {
        m[(2 * k + i, 2 * k + i)] = 1.0;
    }
    (&r * m * r.transpose()).norm() / nu
}

/// `ZZᵀ` factor of a symmetric positive semidefinite matrix, dropping
/// eigenvalues below `tol · λ_max`.
pub fn psd_factor(x: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let sym = (x + x.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > tol * lmax && lmax > 0.0).collect();
    let mut z = DMatrix::zeros(x.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        z.set_column(c, &(eig.eigenvectors.column(i) * eig.eigenvalues[i].sqrt()));
    }
    z
}

/// Extended Krylov projection with `X_m = V L Vᵀ`.
///
/// The projected equation `T L + L Tᵀ + (E₁γ)(E₁γ)ᵀ = 0` is solved densely at
/// every step, and the residual norm is `√2 ‖T_tail L‖_F`.
pub fn kpik_solve(
    op: &dyn StableOperator,
    b: &DMatrix<f64>,
    eps_out: f64,
    m_max: usize,
) -> Result<(DMatrix<f64>, SolveReport)> {
    let start = Instant::now();
    let nu = (b.transpose() * b).norm();
    let mut report = SolveReport::new(Method::Kpik, nu);
    if m_max == 0 {
        return Err(LyapError::InvalidArgument("m_max must be at least 1".into()));
    }
    let mut basis = ExtendedKrylovBasis::new(op, b)?;
    let (l, status) = loop {
        let k = basis.dim();
        let c = basis.e1_gamma(k);
        let l = kron_lyap_solve(basis.t(), &c)?;
        let res = if basis.next_block() == NextBlock::Exhausted {
            0.0
        } else {
            2f64.sqrt() * (basis.t_tail() * &l).norm()
        };
        let m = basis.steps();
        report.push(IterationRecord {
            j: m,
            m,
            space_dim: k,
            resnorm_abs: res,
            resnorm_rel: res / nu,
            shift: None,
            eps_inn: None,
        });
        if res <= eps_out * nu || basis.next_block() == NextBlock::Exhausted {
            break (l, SolveStatus::Converged);
        }
        if m >= m_max {
            break (l, SolveStatus::MaxSpaceReached);
        }
        basis.expand()?;
    };
    report.status = status;
    let z = basis.v() * psd_factor(&l, 1e-12);
    report.wall_time = start.elapsed();
    Ok((z, report))
}
