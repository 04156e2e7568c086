//! Sampled classification of stability notions.
//!
//! Every verdict is three-valued. "consistent" means no refutation was found
//! at the given budget; it is never a proof.

mod attract;
mod delta;
mod mu;
mod sample;
mod switched;

pub use attract::probe_attractivity;
pub use delta::classify_rep;
pub use mu::{classify_fc, classify_rfc, decompose_sigma_chi, estimate_mu, MuTable};
pub use switched::{estimate_switched_bound, SwitchedBound};

use crate::comparison::{ComparisonError, KLSurface};
use crate::systems::{DisturbanceSignal, SystemError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model does not declare 0 as an equilibrium")]
    NotEquilibrium,
    #[error("μ(r, 0) = {sigma} < r = {r}: identity axiom breached upstream")]
    IdentityBreach { r: f64, sigma: f64 },
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Comparison(#[from] ComparisonError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Notion {
    US,
    UGAS,
    UAS,
    #[serde(rename = "weak_attractive")]
    WeakAttractive,
    #[serde(rename = "uniform_weak_attractive")]
    UniformWeakAttractive,
    UGATT,
    RFC,
    REP,
    /// Forward completeness on bounded disturbances.
    FC,
}

impl fmt::Display for Notion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string tag"))
    }
}

impl std::str::FromStr for Notion {
    type Err = ProbeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| ProbeError::InvalidArgument(format!("unknown notion {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeVerdict {
    Consistent,
    Refuted,
    Inconclusive,
}

impl fmt::Display for ProbeVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeVerdict::Consistent => "consistent",
            ProbeVerdict::Refuted => "refuted",
            ProbeVerdict::Inconclusive => "inconclusive",
        })
    }
}

/// A replayable sample: simulate from `x` under `signal` up to `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub signal: DisturbanceSignal,
    pub t: f64,
    /// State norm observed at `t` (`+∞` for escapes).
    #[serde(with = "crate::csvfmt::json_f64")]
    pub norm: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEntry {
    pub eps: f64,
    pub h: f64,
    pub magnitude: f64,
    /// Largest δ found with μ̃(δ, h) ≤ ε; `None` when bisection failed.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauEntry {
    pub r: f64,
    pub eps: f64,
    pub magnitude: f64,
    #[serde(with = "crate::csvfmt::json_f64")]
    pub tau: f64,
    /// Same statistic on the half-budget subsample.
    #[serde(with = "crate::csvfmt::json_f64")]
    pub tau_half_budget: f64,
    /// Bound `(ψ₂(r) + 1) / α(ε)` when a candidate supplies ψ₂ and α.
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub magnitude: f64,
    /// The probe's headline statistic at this level (max μ̃, min δ, max τ...).
    #[serde(with = "crate::csvfmt::json_f64")]
    pub statistic: f64,
    pub escaped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeTables {
    pub mu: Option<KLSurface>,
    pub beta: Option<KLSurface>,
    pub delta: Vec<DeltaEntry>,
    pub tau: Vec<TauEntry>,
    pub levels: Vec<LevelSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub notion: Notion,
    pub verdict: ProbeVerdict,
    pub witnesses: Vec<Witness>,
    pub tables: ProbeTables,
    pub notes: Vec<String>,
}

impl ProbeReport {
    pub fn consistent(&self) -> bool {
        self.verdict == ProbeVerdict::Consistent
    }

    pub fn refuted(&self) -> bool {
        self.verdict == ProbeVerdict::Refuted
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<(), serde_json::Error> {
        serde_json::to_writer_pretty(w, self)
    }

    /// One line such as `RFC: refuted (no refutation ...)`.
    pub fn summary_line(&self) -> String {
        let tail = match self.verdict {
            ProbeVerdict::Consistent => "no refutation at this budget".to_string(),
            ProbeVerdict::Refuted => self
                .witnesses
                .first()
                .map(|w| format!("witness: {}", w.reason))
                .unwrap_or_default(),
            ProbeVerdict::Inconclusive => self.notes.last().cloned().unwrap_or_default(),
        };
        format!("{}: {} ({tail})", self.notion, self.verdict)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeOptions {
    /// Random signals and random initial states per level.
    pub budget: usize,
    pub pieces: usize,
    pub base_step: f64,
    /// The step is capped by `safety / L` for the model's Lipschitz hint L.
    pub safety: f64,
    /// Magnitude levels swept when D is unbounded.
    pub sweep: Vec<f64>,
    pub seed: u64,
    /// Horizon of attractivity probes and of the FC probe.
    pub horizon: f64,
    /// μ̃ cells above this value refute RFC.
    pub threshold: f64,
    /// Relative slack of fitted β surfaces.
    pub fit_tol: f64,
    /// Extra initial directions tried at every radius (normalized).
    pub extra_directions: Vec<Vec<f64>>,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            budget: 16,
            pieces: 8,
            base_step: 1e-2,
            safety: 0.25,
            sweep: vec![1.0, 4.0, 16.0, 64.0, 256.0],
            seed: 0,
            horizon: 10.0,
            threshold: 1e6,
            fit_tol: 1e-3,
            extra_directions: Vec::new(),
        }
    }
}

/// Ratio at which a statistic is said to grow with the sweep.
const SWEEP_GROWTH: f64 = 1.5;
/// Number of consecutive growth steps that refute.
const SWEEP_RUN: usize = 3;

/// True when the last `SWEEP_RUN` ratios `seq[k]/seq[k-1]` all reach
/// `SWEEP_GROWTH`.
fn sustained_growth(seq: &[f64]) -> bool {
    seq.len() > SWEEP_RUN
        && seq[seq.len() - SWEEP_RUN - 1..]
            .windows(2)
            .all(|w| w[0] > 0.0 && w[1] >= SWEEP_GROWTH * w[0])
}

fn still_moving(seq: &[f64], rel: f64) -> bool {
    match seq {
        [.., a, b] => (b - a).abs() > rel * a.abs().max(b.abs()),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn notion_tags_round_trip() {
        for n in [
            Notion::US,
            Notion::UGAS,
            Notion::UAS,
            Notion::WeakAttractive,
            Notion::UniformWeakAttractive,
            Notion::UGATT,
            Notion::RFC,
            Notion::REP,
            Notion::FC,
        ] {
            assert_eq!(n.to_string().parse::<Notion>().unwrap(), n);
        }
        assert_eq!(Notion::WeakAttractive.to_string(), "weak_attractive");
        assert!("bogus".parse::<Notion>().is_err());
    }

    #[test]
    fn growth_rules() {
        assert!(sustained_growth(&[1.0, 2.0, 4.0, 8.0]));
        assert!(!sustained_growth(&[1.0, 2.0, 4.0]));
        assert!(!sustained_growth(&[1.0, 2.0, 2.1, 8.0]));
        assert!(still_moving(&[1.0, 1.1], 0.01));
        assert!(!still_moving(&[1.0, 1.001], 0.01));
        assert!(!still_moving(&[1.0], 0.01));
    }

    #[test]
    fn options_round_trip() {
        let o = ProbeOptions {
            extra_directions: vec![vec![1.0, 0.0]],
            ..Default::default()
        };
        let js = serde_json::to_string(&o).unwrap();
        assert_eq!(serde_json::from_str::<ProbeOptions>(&js).unwrap(), o);
        let partial: ProbeOptions = serde_json::from_str(r#"{"budget": 3}"#).unwrap();
        assert_eq!(partial.budget, 3);
        assert_eq!(partial.pieces, 8);
    }
}
