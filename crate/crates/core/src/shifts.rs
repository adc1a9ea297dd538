//! Online shift strategies computed from a projected pair `(T, Υ)`.

use std::cmp::Ordering;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{LyapError, Result};
use crate::linops::{dense_eig, dense_eigenvalues, to_complex, CMatrix};
use crate::xkrylov::ExtendedKrylovBasis;

/// Projected data a strategy may look at.
#[derive(Debug, Clone, Copy)]
pub struct ShiftContext<'a> {
    /// `k × k` projection of `A`.
    pub t: &'a DMatrix<f64>,
    /// `k × q` projected residual factor.
    pub upsilon: &'a DMatrix<f64>,
}

impl<'a> ShiftContext<'a> {
    pub fn new(t: &'a DMatrix<f64>, upsilon: &'a DMatrix<f64>) -> Result<Self> {
        if !t.is_square() || upsilon.nrows() != t.nrows() {
            return Err(LyapError::DimensionMismatch(format!(
                "shift context: T is {}x{}, Υ has {} rows",
                t.nrows(),
                t.ncols(),
                upsilon.nrows()
            )));
        }
        Ok(Self { t, upsilon })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftProposal {
    /// Stable shift; for a pair, the member with `Im > 0`.
    pub p: Complex64,
    /// The caller must consume `conj(p)` right after `p`.
    pub is_pair: bool,
    /// No stable candidate existed and reflected Ritz values were used.
    pub fallback: bool,
}

impl ShiftProposal {
    fn new(p: Complex64, fallback: bool) -> Self {
        let p = if p.im < 0.0 { p.conj() } else { p };
        Self { p, is_pair: p.im != 0.0, fallback }
    }
}

/// A shift strategy driven by projected data.
pub trait ShiftStrategy: Send {
    fn name(&self) -> &'static str;
    fn propose(&mut self, ctx: &ShiftContext<'_>) -> Result<ShiftProposal>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShiftStrategyKind {
    #[default]
    Hamiltonian,
    Resmin,
    Ritz,
}

impl ShiftStrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            ShiftStrategyKind::Hamiltonian => "hamiltonian",
            ShiftStrategyKind::Resmin => "resmin",
            ShiftStrategyKind::Ritz => "ritz",
        }
    }

    pub fn build(self) -> Box<dyn ShiftStrategy> {
        match self {
            ShiftStrategyKind::Hamiltonian => Box::new(Hamiltonian),
            ShiftStrategyKind::Resmin => Box::new(Resmin),
            ShiftStrategyKind::Ritz => Box::new(RitzCycle::default()),
        }
    }
}

impl FromStr for ShiftStrategyKind {
    type Err = LyapError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hamiltonian" => Ok(ShiftStrategyKind::Hamiltonian),
            "resmin" => Ok(ShiftStrategyKind::Resmin),
            "ritz" => Ok(ShiftStrategyKind::Ritz),
            other => Err(LyapError::InvalidArgument(format!("unknown shift strategy '{other}'"))),
        }
    }
}

pub struct Hamiltonian;

impl ShiftStrategy for Hamiltonian {
    fn name(&self) -> &'static str {
        "hamiltonian"
    }

    fn propose(&mut self, ctx: &ShiftContext<'_>) -> Result<ShiftProposal> {
        hamiltonian_shift(ctx)
    }
}

pub struct Resmin;

impl ShiftStrategy for Resmin {
    fn name(&self) -> &'static str {
        "resmin"
    }

    fn propose(&mut self, ctx: &ShiftContext<'_>) -> Result<ShiftProposal> {
        resmin_shift(ctx).map(|r| r.proposal)
    }
}

#[derive(Debug, Default)]
pub struct RitzCycle {
    cursor: usize,
}

impl ShiftStrategy for RitzCycle {
    fn name(&self) -> &'static str {
        "ritz"
    }

    fn propose(&mut self, ctx: &ShiftContext<'_>) -> Result<ShiftProposal> {
        let p = ritz_cycle_shift(ctx, self.cursor)?;
        self.cursor += 1;
        Ok(p)
    }
}

/// Projected Hamiltonian `[[Tᵀ, 0], [ΥΥᵀ, −T]]`.
pub fn hamiltonian_matrix(ctx: &ShiftContext<'_>) -> DMatrix<f64> {
    let k = ctx.t.nrows();
    let mut h = DMatrix::zeros(2 * k, 2 * k);
    h.view_mut((0, 0), (k, k)).copy_from(&ctx.t.transpose());
    h.view_mut((k, 0), (k, k)).copy_from(&(ctx.upsilon * ctx.upsilon.transpose()));
    h.view_mut((k, k), (k, k)).copy_from(&(-ctx.t));
    h
}

/// Descending score, then smaller `|Im|`, more negative `Re`, `Im >= 0`.
fn candidate_order(a: (f64, Complex64), b: (f64, Complex64)) -> Ordering {
    let (sa, la) = a;
    let (sb, lb) = b;
    let scale = sa.abs().max(sb.abs());
    if (sa - sb).abs() > 1e-12 * scale {
        return sb.total_cmp(&sa);
    }
    la.im
        .abs()
        .total_cmp(&lb.im.abs())
        .then(la.re.total_cmp(&lb.re))
        .then((lb.im >= 0.0).cmp(&(la.im >= 0.0)))
}

/// Stable eigenvalue of the projected Hamiltonian whose eigenvector has the
/// largest trailing half `t` (eigenvectors normalized to unit length).
pub fn hamiltonian_shift(ctx: &ShiftContext<'_>) -> Result<ShiftProposal> {
    let k = ctx.t.nrows();
    let h = hamiltonian_matrix(ctx);
    let best = dense_eig(&h)?
        .into_iter()
        .filter(|e| e.value.re < 0.0)
        .map(|e| (e.vector.rows(k, k).norm(), e.value))
        .min_by(|a, b| candidate_order(*a, *b));
    match best {
        Some((_, p)) => Ok(ShiftProposal::new(p, false)),
        None => reflected_ritz(ctx.t),
    }
}

/// Reflects `λ ↦ −|Re λ| − i Im λ` and takes the largest `|Re|`.
fn reflected_ritz(t: &DMatrix<f64>) -> Result<ShiftProposal> {
    let p = dense_eigenvalues(t)?
        .into_iter()
        .map(|l| Complex64::new(-l.re.abs(), -l.im))
        .filter(|l| l.re < 0.0)
        .map(|l| (l.re.abs(), l))
        .min_by(|a, b| candidate_order(*a, *b))
        .map(|(_, l)| l)
        .ok_or(LyapError::NoStableShift)?;
    log::warn!("no stable shift candidate; using reflected Ritz value {p}");
    Ok(ShiftProposal::new(p, true))
}

/// `‖Υ − 2θ (T + (θ + iξ) I)⁻¹ Υ‖_F²`, `+∞` outside `θ < 0`.
pub fn resmin_objective(ctx: &ShiftContext<'_>, theta: f64, xi: f64) -> f64 {
    if !(theta < 0.0) || !xi.is_finite() {
        return f64::INFINITY;
    }
    let k = ctx.t.nrows();
    let p = Complex64::new(theta, xi);
    let m = to_complex(ctx.t) + CMatrix::identity(k, k) * p;
    let ups = to_complex(ctx.upsilon);
    let Some(s) = m.lu().solve(&ups) else {
        return f64::INFINITY;
    };
    let r = &ups - s * Complex64::new(2.0 * theta, 0.0);
    let v = r.norm_squared();
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ResminResult {
    pub proposal: ShiftProposal,
    pub value: f64,
    pub start: ShiftProposal,
    pub start_value: f64,
    pub evaluations: usize,
}

const RESMIN_BUDGET: usize = 100;

/// Nelder–Mead descent on the projected residual objective, started at the
/// Hamiltonian shift.
pub fn resmin_shift(ctx: &ShiftContext<'_>) -> Result<ResminResult> {
    let start = hamiltonian_shift(ctx)?;
    let f = |x: [f64; 2]| resmin_objective(ctx, x[0], x[1]);
    let x0 = [start.p.re, start.p.im];
    let f0 = f(x0);
    let dt = 0.25 * x0[0].abs();
    let dx = 0.25 * x0[1].abs().max(x0[0].abs());
    let mut simplex = [(x0, f0), ([x0[0] - dt, x0[1]], 0.0), ([x0[0], x0[1] + dx], 0.0)];
    simplex[1].1 = f(simplex[1].0);
    simplex[2].1 = f(simplex[2].0);
    let mut evals = 3;

    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    while evals + 2 <= RESMIN_BUDGET {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0], simplex[2]);
        let size = (simplex[1].0[0] - best.0[0]).abs().max((worst.0[0] - best.0[0]).abs())
            + (simplex[1].0[1] - best.0[1]).abs().max((worst.0[1] - best.0[1]).abs());
        if size <= 1e-12 * (best.0[0].abs() + best.0[1].abs()) {
            break;
        }
        let centroid = lerp(simplex[0].0, simplex[1].0, 0.5);
        let xr = lerp(centroid, worst.0, -1.0);
        let fr = f(xr);
        evals += 1;
        if fr < best.1 {
            let xe = lerp(centroid, worst.0, -2.0);
            let fe = f(xe);
            evals += 1;
            simplex[2] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[1].1 {
            simplex[2] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = lerp(centroid, xr, 0.5);
                (xc, f(xc))
            } else {
                let xc = lerp(centroid, worst.0, 0.5);
                (xc, f(xc))
            };
            evals += 1;
            if fc < worst.1.min(fr) {
                simplex[2] = (xc, fc);
            } else {
                if evals + 2 > RESMIN_BUDGET {
                    break;
                }
                for i in 1..3 {
                    let x = lerp(best.0, simplex[i].0, 0.5);
                    simplex[i] = (x, f(x));
                }
                evals += 2;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (mut x, mut fx) = simplex[0];
    if x[1] != 0.0 && evals < RESMIN_BUDGET {
        let f_real = f([x[0], 0.0]);
        evals += 1;
        if f_real <= fx {
            x[1] = 0.0;
            fx = f_real;
        }
    }
    if !(x[0] < 0.0) || !fx.is_finite() {
        return Err(LyapError::NoStableShift);
    }
    Ok(ResminResult {
        proposal: ShiftProposal::new(Complex64::new(x[0], x[1]), start.fallback),
        value: fx,
        start,
        start_value: f0,
        evaluations: evals,
    })
}

/// Distinct stable Ritz values, one representative per conjugate pair,
/// ordered by descending `|Re|`.
pub fn ritz_cycle_list(t: &DMatrix<f64>) -> Result<(Vec<Complex64>, bool)> {
    let values = dense_eigenvalues(t)?;
    let mut stable: Vec<Complex64> = values.iter().copied().filter(|l| l.re < 0.0).collect();
    let fallback = stable.is_empty();
    if fallback {
        stable = values.iter().map(|l| Complex64::new(-l.re.abs(), -l.im)).filter(|l| l.re < 0.0).collect();
        if stable.is_empty() {
            return Err(LyapError::NoStableShift);
        }
        log::warn!("no stable Ritz value; cycling through reflected values");
    }
    let mut reps: Vec<Complex64> = stable.into_iter().filter(|l| l.im >= 0.0).collect();
    reps.sort_by(|a, b| candidate_order((a.re.abs(), *a), (b.re.abs(), *b)));
    Ok((reps, fallback))
}

pub fn ritz_cycle_shift(ctx: &ShiftContext<'_>, cursor: usize) -> Result<ShiftProposal> {
    let (list, fallback) = ritz_cycle_list(ctx.t)?;
    Ok(ShiftProposal::new(list[cursor % list.len()], fallback))
}

/// Hamiltonian shift on the first block: `T₁` and `E₁γ`.
pub fn initial_shift(basis: &ExtendedKrylovBasis<'_>) -> Result<ShiftProposal> {
    let t = basis.t().clone();
    let ups = basis.e1_gamma(basis.dim());
    hamiltonian_shift(&ShiftContext::new(&t, &ups)?)
}
