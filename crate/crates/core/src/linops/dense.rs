//! Small dense kernels used at projected scale.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{LyapError, Result};

pub type CMatrix = DMatrix<Complex64>;

/// Relative tolerance used to flag numerically rank-deficient factors.
pub const RANK_TOL: f64 = 1e-12;

/// Thin QR factorization `X = Q R`.
#[derive(Debug, Clone)]
pub struct EconomyQr {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Some `|R_ii| <= RANK_TOL * ||X||_F`.
    pub rank_deficient: bool,
}

impl EconomyQr {
    /// Smallest diagonal entry of `R` relative to `||X||_F`.
    pub fn min_relative_diag(&self, x_norm: f64) -> f64 {
        if x_norm == 0.0 {
            return 0.0;
        }
        (0..self.r.ncols()).map(|i| self.r[(i, i)].abs()).fold(f64::INFINITY, f64::min) / x_norm
    }
}

/// Householder QR of a tall matrix with the diagonal of `R` made nonnegative.
pub fn economy_qr(x: &DMatrix<f64>) -> EconomyQr {
    let (n, k) = x.shape();
    assert!(n >= k, "economy_qr needs at least as many rows as columns");
    if k == 0 {
        return EconomyQr { q: DMatrix::zeros(n, 0), r: DMatrix::zeros(0, 0), rank_deficient: false };
    }
    let qr = x.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..k {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    let tol = RANK_TOL * x.norm();
    let rank_deficient = (0..k).any(|i| r[(i, i)].abs() <= tol);
    EconomyQr { q, r, rank_deficient }
}

/// Solves `M Y = RHS` for a small complex square `M`.
pub fn dense_solve_cx(m: &CMatrix, rhs: &CMatrix) -> Result<CMatrix> {
    let k = m.nrows();
    if m.ncols() != k || rhs.nrows() != k {
        return Err(LyapError::DimensionMismatch(format!(
            "dense solve: {}x{} system with {} rhs rows",
            m.nrows(),
            m.ncols(),
            rhs.nrows()
        )));
    }
    if k == 0 {
        return Ok(CMatrix::zeros(0, rhs.ncols()));
    }
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let lu = m.clone().lu();
    let u = lu.u();
    let umin = (0..k).map(|i| u[(i, i)].norm()).fold(f64::INFINITY, f64::min);
    if scale == 0.0 || umin <= 10.0 * k as f64 * f64::EPSILON * scale {
        return Err(LyapError::SingularProjectedSystem);
    }
    lu.solve(rhs).ok_or(LyapError::SingularProjectedSystem)
}

/// Least-squares solution of a tall complex system.
#[derive(Debug, Clone)]
pub struct LstsqResult {
    pub y: CMatrix,
    /// Orthonormal basis of the orthogonal complement of `range(M)`.
    pub q2: CMatrix,
    /// `||Q2ᴴ RHS||_F`, the minimal residual norm.
    pub resnorm: f64,
}

/// Minimizes `||M Y − RHS||_F` via a full Householder QR of `M` (`r >= k`).
pub fn dense_lstsq_cx(m: &CMatrix, rhs: &CMatrix) -> Result<LstsqResult> {
    let (r, k) = m.shape();
    if r < k || rhs.nrows() != r {
        return Err(LyapError::DimensionMismatch(format!(
            "least squares: {r}x{k} matrix with {} rhs rows",
            rhs.nrows()
        )));
    }
    let (q, rr) = householder_qr_cx(m);
    let tol = RANK_TOL * m.norm();
    if (0..k).any(|i| rr[(i, i)].norm() <= tol) {
        return Err(LyapError::RankDeficientLS);
    }
    let qh_rhs = q.adjoint() * rhs;
    let mut y = qh_rhs.rows(0, k).into_owned();
    for c in 0..y.ncols() {
        for i in (0..k).rev() {
            let mut acc = y[(i, c)];
            for j in i + 1..k {
                acc -= rr[(i, j)] * y[(j, c)];
            }
            y[(i, c)] = acc / rr[(i, i)];
        }
    }
    let resnorm = qh_rhs.rows(k, r - k).norm();
    let q2 = q.columns(k, r - k).into_owned();
    Ok(LstsqResult { y, q2, resnorm })
}

/// Full complex Householder QR: returns unitary `Q` (r×r) and `R` (r×k).
fn householder_qr_cx(m: &CMatrix) -> (CMatrix, CMatrix) {
    let (r, k) = m.shape();
    let mut a = m.clone();
    let mut q = CMatrix::identity(r, r);
    for j in 0..k.min(r.saturating_sub(1)) {
        let xnorm = a.view((j, j), (r - j, 1)).norm();
        if xnorm == 0.0 {
            continue;
        }
        let x0 = a[(j, j)];
        let phase = if x0.norm() == 0.0 { Complex64::new(1.0, 0.0) } else { x0 / x0.norm() };
        let alpha = -phase * xnorm;
        let mut v: DVector<Complex64> = a.view((j, j), (r - j, 1)).column(0).into_owned();
        v[0] -= alpha;
        let vnorm = v.norm();
        if vnorm == 0.0 {
            continue;
        }
        v /= Complex64::new(vnorm, 0.0);
        let two = Complex64::new(2.0, 0.0);
        // A[j.., j..] -= 2 v (vᴴ A[j.., j..])
        {
            let mut sub = a.view_mut((j, j), (r - j, k - j));
            let w = v.adjoint() * &sub;
            sub -= &v * w * two;
        }
        // Q[:, j..] -= 2 (Q[:, j..] v) vᴴ
        {
            let mut sub = q.view_mut((0, j), (r, r - j));
            let w = &sub * &v;
            sub -= w * v.adjoint() * two;
        }
        for i in j + 1..r {
            a[(i, j)] = Complex64::new(0.0, 0.0);
        }
    }
    (q, a)
}

/// Eigenpair of a real matrix; vectors have unit 2-norm.
#[derive(Debug, Clone)]
pub struct EigPair {
    pub value: Complex64,
    pub vector: DVector<Complex64>,
}

struct RealSchur {
    q: DMatrix<f64>,
    t: DMatrix<f64>,
    /// Start index and size (1 or 2) of each diagonal block.
    blocks: Vec<(usize, usize)>,
}

fn real_schur(m: &DMatrix<f64>) -> Result<RealSchur> {
    let k = m.nrows();
    if m.ncols() != k {
        return Err(LyapError::DimensionMismatch("eigenproblem needs a square matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(LyapError::EigFailure);
    }
    if k > 0 && m == &m.transpose() {
        let eig = m.clone().symmetric_eigen();
        let t = DMatrix::from_diagonal(&eig.eigenvalues);
        return Ok(RealSchur { q: eig.eigenvectors, t, blocks: (0..k).map(|i| (i, 1)).collect() });
    }
    let (q, t) = francis_schur(m).ok_or(LyapError::EigFailure)?;
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < k {
        if i + 1 < k && t[(i + 1, i)] != 0.0 {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    Ok(RealSchur { q, t, blocks })
}

// Hessenberg reduction followed by the Francis double-shift QR iteration
// with ad hoc exceptional shifts (EISPACK hqr2, Schur part only). Real
// 2x2 blocks are split; deflated subdiagonal entries are set to zero.
fn francis_schur(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let nn = m.nrows();
    let (mut v, mut h) = m.clone().hessenberg().unpack();
    for j in 0..nn {
        for i in j + 2..nn {
            h[(i, j)] = 0.0;
        }
    }
    if nn < 2 {
        return Some((v, h));
    }
    let eps = f64::EPSILON;
    let mut norm = 0.0;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += h[(i, j)].abs();
        }
    }
    let mut n = nn as isize - 1;
    let mut exshift = 0.0;
    let mut iter = 0usize;
    let mut total = 0usize;
    let (mut p, mut q, mut r, mut s, mut z);
    let (mut x, mut y, mut w);
    while n >= 0 {
        let nu = n as usize;
        let mut l = nu;
        while l > 0 {
            s = h[(l - 1, l - 1)].abs() + h[(l, l)].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[(l, l - 1)].abs() < eps * s {
                break;
            }
            l -= 1;
        }
        if l == nu {
            h[(nu, nu)] += exshift;
            if nu > 0 {
                h[(nu, nu - 1)] = 0.0;
            }
            n -= 1;
            iter = 0;
        } else if l == nu - 1 {
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            p = (h[(nu - 1, nu - 1)] - h[(nu, nu)]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[(nu, nu)] += exshift;
            h[(nu - 1, nu - 1)] += exshift;
            if nu > 1 {
                h[(nu - 1, nu - 2)] = 0.0;
            }
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                x = h[(nu, nu - 1)];
                s = x.abs() + z.abs();
                p = x / s;
                q = z / s;
                r = (p * p + q * q).sqrt();
                p /= r;
                q /= r;
                for j in nu - 1..nn {
                    z = h[(nu - 1, j)];
                    h[(nu - 1, j)] = q * z + p * h[(nu, j)];
                    h[(nu, j)] = q * h[(nu, j)] - p * z;
                }
                for i in 0..=nu {
                    z = h[(i, nu - 1)];
                    h[(i, nu - 1)] = q * z + p * h[(i, nu)];
                    h[(i, nu)] = q * h[(i, nu)] - p * z;
                }
                for i in 0..nn {
                    z = v[(i, nu - 1)];
                    v[(i, nu - 1)] = q * z + p * v[(i, nu)];
                    v[(i, nu)] = q * v[(i, nu)] - p * z;
                }
                h[(nu, nu - 1)] = 0.0;
            }
            n -= 2;
            iter = 0;
        } else {
            x = h[(nu, nu)];
            y = h[(nu - 1, nu - 1)];
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            if iter == 10 {
                exshift += x;
                for i in 0..=nu {
                    h[(i, i)] -= x;
                }
                s = h[(nu, nu - 1)].abs() + h[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in 0..=nu {
                        h[(i, i)] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }
            iter += 1;
            total += 1;
            if iter > 100 || total > 100 * nn {
                return None;
            }
            let mut mm = nu - 2;
            loop {
                z = h[(mm, mm)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[(mm + 1, mm)] + h[(mm, mm + 1)];
                q = h[(mm + 1, mm + 1)] - z - r - s;
                r = h[(mm + 2, mm + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if mm == l {
                    break;
                }
                if h[(mm, mm - 1)].abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (h[(mm - 1, mm - 1)].abs() + z.abs() + h[(mm + 1, mm + 1)].abs()))
                {
                    break;
                }
                mm -= 1;
            }
            for i in mm + 2..=nu {
                h[(i, i - 2)] = 0.0;
                if i > mm + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }
            for k in mm..nu {
                let notlast = k != nu - 1;
                if k != mm {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if notlast { h[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != mm {
                        h[(k, k - 1)] = -s * x;
                    } else if l != mm {
                        h[(k, k - 1)] = -h[(k, k - 1)];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..nn {
                        p = h[(k, j)] + q * h[(k + 1, j)];
                        if notlast {
                            p += r * h[(k + 2, j)];
                            h[(k + 2, j)] -= p * z;
                        }
                        h[(k, j)] -= p * x;
                        h[(k + 1, j)] -= p * y;
                    }
                    for i in 0..=nu.min(k + 3) {
                        p = x * h[(i, k)] + y * h[(i, k + 1)];
                        if notlast {
                            p += z * h[(i, k + 2)];
                            h[(i, k + 2)] -= p * r;
                        }
                        h[(i, k)] -= p;
                        h[(i, k + 1)] -= p * q;
                    }
                    for i in 0..nn {
                        p = x * v[(i, k)] + y * v[(i, k + 1)];
                        if notlast {
                            p += z * v[(i, k + 2)];
                            v[(i, k + 2)] -= p * r;
                        }
                        v[(i, k)] -= p;
                        v[(i, k + 1)] -= p * q;
                    }
                }
            }
        }
    }
    for j in 0..nn {
        for i in j + 2..nn {
            h[(i, j)] = 0.0;
        }
    }
    if !h.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((v, h))
}

fn block_eigenvalues(t: &DMatrix<f64>, i: usize, size: usize) -> [Complex64; 2] {
    if size == 1 {
        let v = Complex64::new(t[(i, i)], 0.0);
        return [v, v];
    }
    let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
    let half_tr = 0.5 * (a + d);
    let disc = 0.25 * (a - d) * (a - d) + b * c;
    if disc >= 0.0 {
        let s = disc.sqrt();
        // Larger-magnitude root first, the other from the determinant.
        let r1 = if half_tr >= 0.0 { half_tr + s } else { half_tr - s };
        let det = a * d - b * c;
        let r2 = if r1 != 0.0 { det / r1 } else { half_tr - (r1 - half_tr) };
        [Complex64::new(r1, 0.0), Complex64::new(r2, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [Complex64::new(half_tr, s), Complex64::new(half_tr, -s)]
    }
}

/// Eigenvalues of a real square matrix, conjugate pairs exact.
pub fn dense_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let rs = real_schur(m)?;
    let mut out = Vec::with_capacity(m.nrows());
    for &(i, size) in &rs.blocks {
        let ev = block_eigenvalues(&rs.t, i, size);
        out.extend_from_slice(&ev[..size]);
    }
    Ok(out)
}

/// Eigenvalues and unit eigenvectors of a real square matrix.
pub fn dense_eig(m: &DMatrix<f64>) -> Result<Vec<EigPair>> {
    let rs = real_schur(m)?;
    let k = m.nrows();
    let tnorm = rs.t.norm().max(f64::MIN_POSITIVE);
    let small = f64::EPSILON * tnorm;
    let qc: CMatrix = rs.q.map(|v| Complex64::new(v, 0.0));
    let mut out = Vec::with_capacity(k);
    for (bi, &(i, size)) in rs.blocks.iter().enumerate() {
        let ev = block_eigenvalues(&rs.t, i, size);
        let complex_pair = size == 2 && ev[0].im != 0.0;
        let count = if complex_pair { 1 } else { size };
        for lambda in ev.iter().take(count).copied() {
            let x = quasi_triangular_null_vector(&rs.t, &rs.blocks[..=bi], lambda, small);
            let mut v = &qc * x;
            normalize_phase(&mut v);
            out.push(EigPair { value: lambda, vector: v.clone() });
            if complex_pair {
                out.push(EigPair { value: lambda.conj(), vector: v.map(|z| z.conj()) });
            }
        }
    }
    Ok(out)
}

/// Solves `(T − λI) x = 0` on the leading blocks, nonzero in the last block.
fn quasi_triangular_null_vector(
    t: &DMatrix<f64>,
    blocks: &[(usize, usize)],
    lambda: Complex64,
    small: f64,
) -> DVector<Complex64> {
    let k = t.nrows();
    let tc = |r: usize, c: usize| Complex64::new(t[(r, c)], 0.0);
    let mut x = DVector::from_element(k, Complex64::new(0.0, 0.0));
    let &(last, size) = blocks.last().unwrap();
    if size == 1 {
        x[last] = Complex64::new(1.0, 0.0);
    } else {
        let a = tc(last, last) - lambda;
        let b = tc(last, last + 1);
        let c = tc(last + 1, last);
        let d = tc(last + 1, last + 1) - lambda;
        let (u0, u1) = if b.norm() + a.norm() >= c.norm() + d.norm() { (b, -a) } else { (d, -c) };
        if u0.norm() + u1.norm() == 0.0 {
            x[last] = Complex64::new(1.0, 0.0);
        } else {
            x[last] = u0;
            x[last + 1] = u1;
        }
    }
    let end = last + size;
    for &(i, sz) in blocks[..blocks.len() - 1].iter().rev() {
        let mut rhs = [Complex64::new(0.0, 0.0); 2];
        for (off, slot) in rhs.iter_mut().enumerate().take(sz) {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in i + sz..end {
                acc += tc(i + off, j) * x[j];
            }
            *slot = -acc;
        }
        if sz == 1 {
            let mut d = tc(i, i) - lambda;
            if d.norm() < small {
                d = Complex64::new(small, 0.0);
            }
            x[i] = rhs[0] / d;
        } else {
            let a = tc(i, i) - lambda;
            let b = tc(i, i + 1);
            let c = tc(i + 1, i);
            let d = tc(i + 1, i + 1) - lambda;
            let mut det = a * d - b * c;
            if det.norm() < small * small.max(1e-300).sqrt() {
                det = Complex64::new(small, 0.0);
            }
            x[i] = (d * rhs[0] - b * rhs[1]) / det;
            x[i + 1] = (a * rhs[1] - c * rhs[0]) / det;
        }
        // Rescale to avoid overflow from tiny divisors.
        let mx = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if mx > 1e100 {
            x /= Complex64::new(mx, 0.0);
        }
    }
    x
}

/// Unit 2-norm with the largest-modulus component real and positive.
fn normalize_phase(v: &mut DVector<Complex64>) {
    let nrm = v.norm();
    if nrm == 0.0 {
        return;
    }
    let mut best = 0;
    for i in 0..v.len() {
        if v[i].norm() > v[best].norm() * (1.0 + 1e-12) {
            best = i;
        }
    }
    let phase = v[best] / v[best].norm();
    let factor = phase.conj() / nrm;
    for z in v.iter_mut() {
        *z *= factor;
    }
}

/// Complex Schur form `M = U T Uᴴ` with `T` upper triangular.
pub fn complex_schur(m: &DMatrix<f64>) -> Result<(CMatrix, CMatrix)> {
    let rs = real_schur(m)?;
    let k = m.nrows();
    let mut u: CMatrix = rs.q.map(|v| Complex64::new(v, 0.0));
    let mut t: CMatrix = rs.t.map(|v| Complex64::new(v, 0.0));
    for &(i, size) in rs.blocks.iter().rev() {
        if size != 2 {
            continue;
        }
        let ev = block_eigenvalues(&rs.t, i, size);
        let mu = ev[0] - t[(i + 1, i + 1)];
        rotate_block(&mut t, &mut u, i, mu, k);
    }
    for r in 0..k {
        for c in 0..r {
            t[(r, c)] = Complex64::new(0.0, 0.0);
        }
    }
    Ok((u, t))
}

fn rotate_block(t: &mut CMatrix, u: &mut CMatrix, i: usize, mu: Complex64, k: usize) {
    let m = i + 1;
    let sub = t[(m, i)];
    let r = (mu.norm_sqr() + sub.norm_sqr()).sqrt();
    if r == 0.0 {
        return;
    }
    let c = mu / r;
    let s = sub / r;
    // G = [c̄ s̄; −s c] applied on the left, Gᴴ on the right.
    for col in i..k {
        let a = t[(i, col)];
        let b = t[(m, col)];
        t[(i, col)] = c.conj() * a + s.conj() * b;
        t[(m, col)] = -s * a + c * b;
    }
    for row in 0..=m {
        let a = t[(row, i)];
        let b = t[(row, m)];
        t[(row, i)] = a * c + b * s;
        t[(row, m)] = -a * s.conj() + b * c.conj();
    }
    for row in 0..k {
        let a = u[(row, i)];
        let b = u[(row, m)];
        u[(row, i)] = a * c + b * s;
        u[(row, m)] = -a * s.conj() + b * c.conj();
    }
    t[(m, i)] = Complex64::new(0.0, 0.0);
}

/// Promotes a real matrix to complex.
pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Orthonormal basis of `range(X)` dropping directions below `RANK_TOL`.
pub fn orth(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = x.shape();
    if k == 0 || x.norm() == 0.0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = x.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 1e-10 * smax).collect();
    DMatrix::from_fn(n, keep.len(), |r, c| u[(r, keep[c])])
}
