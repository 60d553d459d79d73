//! Numerical toolkit for pseudo-orbits, shadowing searches and the local
//! geometry of hyperbolic singularities of flows.
//!
//! The crate provides:
//!
//! - vector-field definitions (builtin catalog + parsed expressions) with
//!   adaptive Runge-Kutta integration, dense output and event detection
//!   ([`field`], [`flow`]);
//! - singularity location and hyperbolicity certificates ([`singularity`]);
//! - eigenframe box charts around saddles: diamond cross-sections, band
//!   indices, exit times and boundary-crossing counts ([`localmodel`]);
//! - pseudo-orbit construction and validation in uniform-jump and
//!   gauge-rescaled variants, plus a grid chain-recurrence classifier
//!   ([`pseudo`], [`chainrec`]);
//! - a bottleneck time-warp matcher and budgeted shadowing-orbit searches
//!   ([`warp`], [`shadow`]);
//! - homoclinic-loop detection with branch accounting ([`homoclinic`]).
//!
//! The `orbitshade` binary wires these into reproducible experiments.

pub mod chainrec;
pub mod expr;
pub mod field;
pub mod flow;
pub mod homoclinic;
pub mod linalg;
pub mod localmodel;
pub mod pseudo;
pub mod shadow;
pub mod simplex;
pub mod singularity;
pub mod vecutil;
pub mod warp;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] expr::ParseError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value encountered at {context}")]
    NonFinite { context: String },
    #[error("step size underflow at t = {t} (stiffness or finite-time blow-up)")]
    StepUnderflow { t: f64 },
    #[error("singularity residual {residual:.3e} exceeds {limit:.3e}")]
    Residual { residual: f64, limit: f64 },
    #[error("Jacobian at the singularity is not semisimple (defective eigenvalue near {re}+{im}i)")]
    NonSemisimple { re: f64, im: f64 },
    #[error("certificate is not hyperbolic (min |Re eigenvalue| = {min_re:.3e})")]
    NotHyperbolic { min_re: f64 },
    #[error("operation requires a saddle, got {s} stable / {u} unstable directions")]
    NotSaddle { s: usize, u: usize },
    #[error("another singularity at {point:?} lies inside the box")]
    SecondSingularity { point: Vec<f64> },
    #[error("box exit validation failed: point {point:?} never left within horizon {horizon}")]
    NoExitValidation { point: Vec<f64>, horizon: f64 },
    #[error("point is not on the diamond section (|v^s| = {vs:.3e}, |v^u| = {vu:.3e})")]
    OffSection { vs: f64, vu: f64 },
    #[error("chart radius {rho:.3e} outside the admissible band range (K = {k})")]
    OutsideBands { rho: f64, k: i64 },
    #[error("no return point found within budget ({tried} seeds tried)")]
    NoReturnPoint { tried: usize },
    #[error("gauge too small for available returns: required jump {required:.3e}, boundary gauge infimum {available:.3e}")]
    GaugeTooSmall { required: f64, available: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, Error>;
