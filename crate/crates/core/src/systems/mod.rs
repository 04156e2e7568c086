//! Disturbed systems Σ = (X, 𝒟, φ): signals, models, the flow evaluator and
//! sampled checks of the system axioms.

mod axioms;
mod integrate;
mod model;
pub mod sampling;
mod signal;

pub use axioms::{check_axioms, check_homogeneity, AxiomOptions, AxiomReport, HomogeneityReport};
pub use integrate::{flow, flow_at, flow_final, run_observed, EscapeBracket, RunEnd, Trajectory};
pub use model::{
    euclid, DisturbanceSet, Dynamics, FnField, LinearFlow, LipschitzHint, SignAbsorbing, SystemModel, VectorField,
    DEFAULT_EXPLOSION_THRESHOLD,
};
pub use signal::{DisturbanceSignal, SignalError};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("state dimension {got} does not match model dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("disturbance value {value} is not a mode index (model has {count} modes)")]
    ModeOutOfRange { value: f64, count: usize },
    #[error(transparent)]
    Signal(#[from] SignalError),
}
