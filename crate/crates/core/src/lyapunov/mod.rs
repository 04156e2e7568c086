//! Lyapunov candidates and sampled verification: Dini derivatives, decay
//! and integral inequalities, coercivity profiles.
//!
//! Sampling can refute a decay inequality but never certify it, so reports
//! say "no violation found" rather than "verified".

mod candidate;
mod verify;

pub use candidate::{DerivativeFn, LyapunovCandidate, StateFn};
pub use verify::{
    coercivity_profile, dini_derivative, verify_decay, verify_integral_bound, CoercivityOptions, CoercivityProfile,
    CoercivityRow, DecayReport, DecaySample, DiniEstimate, DiniOptions, IntegralBoundReport, LyapunovError, Verdict,
    DEFAULT_DECAY_TOL,
};
