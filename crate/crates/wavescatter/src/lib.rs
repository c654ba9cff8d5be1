//! Numerical laboratory for the scattering theory of defocusing semilinear
//! wave equations `□u + f(u) = 0` on `ℝ × ℝ³` with energy-critical growth
//! `f(u) ~ u⁵`.
//!
//! The crate provides, end to end:
//!
//! * nonlinearity families with exact derivative ladders and structural
//!   hypothesis validation ([`nonlinearity`]),
//! * radial and Cartesian grids, energies, space-time norms and the radial
//!   Radon transform ([`grids`], [`norms`], [`radon`]),
//! * second-order wave solvers: the characteristic-exact radial scheme,
//!   radial leapfrog for semilinear/potential/forced problems, and a 3-D
//!   leapfrog cube solver with point probes ([`solver`]),
//! * Friedlander radiation fields: closed-form evaluation of the
//!   plane-integral representation, far-field extraction with Richardson
//!   extrapolation in `1/r`, the nonlinear forward map and its fixed-point
//!   inverse, and the scattering operator ([`radiation`]),
//! * the multi-parameter interaction hierarchy behind the fourth-order
//!   expansion of the scattering operator, with brute-force source
//!   combinatorics and remainder-order studies ([`expansion`]),
//! * conormal spherical waves, flow-out pattern geometry at null infinity and
//!   the recursive transport system for expansion profiles ([`geometry`]),
//! * singularity detection statistics and coefficient recovery
//!   ([`recovery`]),
//! * plain-text and binary field serialization ([`io`]).
//!
//! All floating point work is `f64`. Operations validate their inputs and
//! return [`Error`] rather than panicking on bad arguments.

pub mod expansion;
pub mod geometry;
pub mod grids;
pub mod io;
pub mod nonlinearity;
pub mod norms;
pub mod radiation;
pub mod radon;
pub mod recovery;
pub mod solver;

mod util;

pub use util::{fit_loglog, LoglogFit};

/// Crate-wide error type.
///
/// `NumericalGuard` signals a detected blow-up or non-finite value during
/// time stepping; everything else reports a contract violation at the call
/// boundary.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("numerical guard tripped: {0}")]
    NumericalGuard(String),
    #[error("dependency failed: {0}")]
    Dependency(String),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code convention: configuration/validation failures map
    /// to 2, numerical guards to 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericalGuard(_) => 3,
            _ => 2,
        }
    }
}
