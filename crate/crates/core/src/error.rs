use thiserror::Error;

use crate::model::Side;

/// Errors raised by the geometry, model and solver layers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("point is not on the interface (straightened abscissa {offset:e})")]
    NotOnInterface { offset: f64 },

    #[error("control {index} is not a sampled control of side {side}")]
    UnknownControl { side: Side, index: usize },

    #[error("{side} control used at y1 = {y1} on the opposite side of the interface")]
    SideMismatch { side: Side, y1: f64 },

    #[error("degenerate instance: controllability radius delta0 = {delta0} is not positive")]
    DegenerateInstance { delta0: f64 },

    #[error("no sampled control satisfies the sign constraint; refine the control sampling")]
    EmptyConstraintSet,

    #[error("bracket search failed: {0}")]
    BracketFailure(String),

    #[error("level {level} lies below the tangential minimum {minimum}")]
    LevelBelowMinimum { level: f64, minimum: f64 },

    #[error("no admissible control at grid node ({i}, {j})")]
    NoAdmissibleControl { i: usize, j: usize },

    #[error("fixed-point iteration stalled after {sweeps} sweeps (residual {residual:e})")]
    NonConvergence { sweeps: usize, residual: f64 },

    #[error("vanishing-discount values still move by {gap:e} at the smallest discount rate")]
    SchedulePlateauFailure { gap: f64 },

    #[error("ergodic constants decrease from {previous} to {next} as the strip widens")]
    NonMonotoneTrace { previous: f64, next: f64 },

    #[error("slope b = {b} outside [-{bound}, {bound}]")]
    OutOfDomain { b: f64, bound: f64 },

    #[error("effective table does not cover {what}")]
    TableCoverage { what: String },

    #[error("point ({x1}, {x2}) maps outside the computational box")]
    OutOfBox { x1: f64, x2: f64 },

    #[error("{side} control applied at t = {t} while the state lies strictly inside the other region")]
    MixingViolation { side: Side, t: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<V, E = Error> = std::result::Result<V, E>;
