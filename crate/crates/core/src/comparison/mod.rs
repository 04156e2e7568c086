//! Grid-sampled comparison functions: class K, K∞, L and positive definite
//! tables, two-argument KL surfaces, and the function-construction lemmas
//! used by the converse theorems.

mod construct;
mod io;
mod surface;
mod table;

pub use construct::{gk_threshold, kl_from_alpha, lipschitz_minorant, sontag_factorize, KlFlowOptions};
pub use surface::{KLSurface, SurfaceKind};
pub use table::{ClassTag, Extrapolation, TabulatedMonotone};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComparisonError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("value {0} is outside the range of a bounded table")]
    NotInvertible(f64),
    #[error(
        "no monotone pair dominates at (r={r}, t={t}): required {required}, achieved {achieved}"
    )]
    Infeasible {
        r: f64,
        t: f64,
        required: f64,
        achieved: f64,
    },
    #[error("integration failure: {0}")]
    Integration(String),
    #[error("parse error: {0}")]
    Parse(String),
}
