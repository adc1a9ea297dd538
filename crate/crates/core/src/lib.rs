//! Low-rank solvers for large Lyapunov equations `AX + XAᵀ + BBᵀ = 0`.
//!
//! The classic LR-ADI iteration lives in [`adi`]; [`kadi`] runs the same
//! iteration implicitly on one growing extended Krylov basis ([`xkrylov`]).

pub mod error;
pub mod linops;

pub use error::{LyapError, Result};
pub mod report;
pub mod shiftsolve;
pub mod xkrylov;
pub mod adi;
pub mod shifts;
pub mod kadi;
pub mod testlab;
