//! Measure transport on the unit interval with a sticky, partially
//! absorbing boundary.
//!
//! The library evolves finite positive atomic measures on `[0,1]` along the
//! characteristics of a Lipschitz velocity field `v` with `v(0) > 0` and
//! `v(1) > 0`. Mass that reaches the right endpoint sticks there and is then
//! removed ("gated") at a constant exponential rate `a`. Three complementary
//! realizations of this dynamics are provided, together with the measure
//! arithmetic needed to compare them:
//!
//! * [`measures`] - atomic measures, total variation and dual
//!   bounded-Lipschitz norms, pairing, push-forward, partial order;
//! * [`flow`] - the characteristic flow map, boundary hitting times, and
//!   empirical Lipschitz certificates;
//! * [`regularized`] - boundary-layer systems in which absorption acts
//!   through a thin linear ramp near `1`, solved both by Picard iteration
//!   on the variation-of-constants form and by an exact per-atom formula;
//! * [`limit`] - the exact singular-limit solution, its mass-loss identity,
//!   and the continuous-dependence constant;
//! * [`stochastic`] - an independent-particle Monte Carlo realization with
//!   per-particle reproducible randomness;
//! * [`study`] - the convergence-rate harness that measures how fast the
//!   boundary-layer solutions approach the limit solution as the layer
//!   shrinks.
//!
//! The dual bounded-Lipschitz norm is computed exactly (up to simplex
//! arithmetic) through the small dense linear programs in [`lp`].

#![forbid(unsafe_code)]

pub mod flow;
pub mod limit;
pub mod lp;
pub mod measures;
pub mod regularized;
pub mod stochastic;
pub mod study;

pub use flow::{FlowResult, VelocityField};
pub use measures::{AtomicMeasure, BlFunction, DensitySpec};
pub use regularized::{AbsorptionParams, MeasureTrajectory, Regularizer};

use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("position {x} lies outside [0,1]")]
    PositionOutOfDomain { x: f64 },
    #[error("{what} must be finite, got {value}")]
    NonFinite { what: &'static str, value: f64 },
    #[error("push-forward sent an atom to {x}, outside [0,1]")]
    PushForwardRange { x: f64 },
    #[error("breakpoints must be strictly increasing within [0,1] and paired with finite values")]
    InvalidBreakpoints,
    #[error("velocity must point inward at both endpoints: v({at}) = {value}")]
    BoundaryInflow { at: f64, value: f64 },
    #[error("declared {what} bound {declared} is below the sampled value {observed}")]
    UncertifiedBound {
        what: &'static str,
        declared: f64,
        observed: f64,
    },
    #[error("time {t} must be nonnegative and finite")]
    InvalidTime { t: f64 },
    #[error("absorption rate must be positive and finite, got {rate}")]
    NonPositiveRate { rate: f64 },
    #[error("layer indices must satisfy m >= n >= 1, got n = {n}, m = {m}")]
    RegularizerOrder { n: u32, m: u32 },
    #[error("layer index must be at least 1")]
    ZeroRegularizerIndex,
    #[error("initial measure must be positive")]
    SignedInitialData,
    #[error("dt = {dt} does not divide the time horizon {t_final}")]
    GridMismatch { t_final: f64, dt: f64 },
    #[error("time grid must be uniform and start at 0")]
    NonUniformGrid,
    #[error("Picard iteration did not converge within {max_iter} sweeps (last residual {residual:.3e})")]
    IterationLimit { max_iter: usize, residual: f64 },
    #[error("linear program is unbounded")]
    LpUnbounded,
    #[error("linear program did not certify optimality within {pivots} pivots")]
    LpIterationLimit { pivots: usize },
    #[error("initial distribution cannot be normalized to a probability")]
    NotNormalizable,
    #[error("particle count must be at least 1")]
    EmptyEnsemble,
    #[error("mismatched configuration: {0}")]
    ConfigMismatch(String),
    #[error("evaluation time {t} is not a node of the time grid")]
    EvalTimeOffGrid { t: f64 },
    #[error("density values must be nonnegative and finite")]
    InvalidDensity,
    #[error("declared mass {declared} does not match the density integral {integral}")]
    MassMismatch { declared: f64, integral: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
