//! Converse Lyapunov constructions from a UGAS premise: integral-type V_k,
//! max-type V_k^η, the weighted series W and its decay floor ψ₁.
//!
//! The sup over disturbances is a max over a fixed sample of signals, so
//! every V_k here is a lower estimate of the exact one.

mod lipschitz;
mod vk;

pub use lipschitz::{estimate_flow_lipschitz, FlowLipschitz};
pub use vk::{construct_vk_integral, construct_vk_max, IntegralVk, MaxVk, QuadratureCheck};

use crate::comparison::{gk_threshold, ClassTag, ComparisonError, Extrapolation, TabulatedMonotone};
use crate::lyapunov::LyapunovCandidate;
use crate::probes::Witness;
use crate::systems::sampling::{random_signal, sample_rng, subseed};
use crate::systems::{DisturbanceSignal, SystemError, SystemModel};
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConverseError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// A sampled trajectory escaped; the UGAS premise is refuted.
    #[error("trajectory escaped ({})", .0.reason)]
    Escaped(Box<Witness>),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Comparison(#[from] ComparisonError),
}

#[derive(Debug, Clone)]
pub struct ConverseConfig {
    /// Unit-Lipschitz K∞ function below α₂⁻¹.
    pub rho: TabulatedMonotone,
    /// α₁ of a factorization β(r, t) ≤ α₂(α₁(r)e^{−t}).
    pub alpha1: TabulatedMonotone,
    pub k_max: u32,
    /// Ball radius for the Lipschitz table M(R, k).
    pub radius: f64,
    pub disturbance_budget: usize,
    pub pieces: usize,
    pub eta: f64,
    pub quadrature_step: f64,
    pub seed: u64,
}

impl ConverseConfig {
    pub fn new(rho: TabulatedMonotone, alpha1: TabulatedMonotone) -> Self {
        Self {
            rho,
            alpha1,
            k_max: 8,
            radius: 1.0,
            disturbance_budget: 16,
            pieces: 8,
            eta: 0.5,
            quadrature_step: 1e-3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ConverseError> {
        let bad = |m: &str| Err(ConverseError::InvalidConfig(m.into()));
        if self.rho.class() != ClassTag::Kinf || self.alpha1.class() != ClassTag::Kinf {
            return bad("rho and alpha1 must be Kinf tables");
        }
        let (g, v) = (self.rho.grid(), self.rho.values());
        let steep = g.windows(2).zip(v.windows(2)).any(|(gw, vw)| vw[1] - vw[0] > (gw[1] - gw[0]) * (1.0 + 1e-12));
        let tail_steep = matches!(self.rho.extrapolation(), Extrapolation::Linear { slope } if slope > 1.0 + 1e-12);
        if steep || tail_steep {
            return bad("rho must have Lipschitz constant at most 1");
        }
        if self.k_max == 0 {
            return bad("k_max must be at least 1");
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad("radius must be positive");
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad("eta must lie in (0, 1)");
        }
        if !(self.quadrature_step > 0.0 && self.quadrature_step.is_finite()) {
            return bad("quadrature_step must be positive");
        }
        Ok(())
    }

    /// T(R, k) = ln(1 + k α₁(R)).
    pub fn horizon(&self, r: f64, k: u32) -> f64 {
        (k as f64 * self.alpha1.eval(r)).ln_1p()
    }
}

/// Corner constants then `disturbance_budget` random signals on `[0, horizon]`.
/// Budget b yields a prefix of budget b + 1.
pub(crate) fn converse_signals(model: &SystemModel, cfg: &ConverseConfig, horizon: f64) -> Vec<DisturbanceSignal> {
    let set = &model.disturbance_set;
    let mut out: Vec<DisturbanceSignal> = set.corners(1.0).into_iter().map(DisturbanceSignal::constant).collect();
    if matches!(set, crate::systems::DisturbanceSet::Trivial) {
        return out;
    }
    let stream = subseed(cfg.seed, 0xc0de);
    out.extend(
        (0..cfg.disturbance_budget as u64)
            .map(|i| random_signal(&mut sample_rng(stream, i), set, 1.0, horizon, cfg.pieces)),
    );
    out
}

/// Which family of V_k the series is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    Integral,
    Max,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesRow {
    pub k: u32,
    pub weight: f64,
    /// T(R, k) at the configured radius.
    pub horizon: f64,
    pub lipschitz: FlowLipschitz,
    /// M(R, k) = T(R, k)·L(R, k).
    pub m: f64,
    /// M(k, k), used by the weight.
    pub m_diag: f64,
}

enum Terms {
    Integral(Vec<IntegralVk>),
    Max(Vec<MaxVk>),
}

/// W(x) = Σ_{k ≤ k_max} w_k V_k(x), w_k = 2^{−k}/(1 + M(k, k)), with the
/// decay floor ψ₁(r) = Σ_{k ≤ k_max} w_k G_k(ρ(r)).
pub struct ConstructedLyapunov {
    pub kind: SeriesKind,
    pub rows: Vec<SeriesRow>,
    rho: TabulatedMonotone,
    terms: Terms,
}

impl ConstructedLyapunov {
    pub fn weights(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.weight).collect()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ConverseError> {
        let mut acc = 0.0;
        for (row, k) in self.rows.iter().zip(0..) {
            let v = match &self.terms {
                Terms::Integral(t) => t[k].eval(x)?,
                Terms::Max(t) => t[k].eval(x)?,
            };
            acc += row.weight * v;
        }
        Ok(acc)
    }

    pub fn vk(&self, k: u32, x: &[f64]) -> Result<f64, ConverseError> {
        let i = (k as usize).checked_sub(1).filter(|i| *i < self.rows.len());
        let i = i.ok_or_else(|| ConverseError::InvalidConfig(format!("k = {k} outside 1..={}", self.rows.len())))?;
        match &self.terms {
            Terms::Integral(t) => t[i].eval(x),
            Terms::Max(t) => t[i].eval(x),
        }
    }

    pub fn psi1(&self, r: f64) -> f64 {
        let p = self.rho.eval(r);
        self.rows
            .iter()
            .map(|row| row.weight * gk_threshold(row.k, p).expect("k ≥ 1, ρ ≥ 0"))
            .sum()
    }

    /// Tabulates ψ₁ on `grid` (must start at 0 and reach past ρ⁻¹(1/k_max)).
    pub fn psi1_table(&self, grid: Vec<f64>) -> Result<TabulatedMonotone, ConverseError> {
        let values: Vec<f64> = grid.iter().map(|&r| self.psi1(r)).collect();
        Ok(TabulatedMonotone::new(grid, values, ClassTag::K, Extrapolation::Hold)?)
    }

    /// Wraps W as a candidate; evaluation failures map to NaN.
    pub fn into_candidate(self) -> LyapunovCandidate {
        let name = match self.kind {
            SeriesKind::Integral => "converse-integral",
            SeriesKind::Max => "converse-max",
        };
        let w = Arc::new(self);
        LyapunovCandidate::new(name, move |x| w.eval(x).unwrap_or(f64::NAN))
    }
}

fn series_rows(model: &SystemModel, cfg: &ConverseConfig) -> Result<Vec<SeriesRow>, ConverseError> {
    (1..=cfg.k_max)
        .map(|k| {
            let horizon = cfg.horizon(cfg.radius, k);
            let lipschitz = estimate_flow_lipschitz(model, cfg.radius, horizon, cfg)?;
            let diag_t = cfg.horizon(k as f64, k);
            let diag = estimate_flow_lipschitz(model, k as f64, diag_t, cfg)?;
            let m_diag = diag_t * diag.value;
            Ok(SeriesRow {
                k,
                weight: 0.5f64.powi(k as i32) / (1.0 + m_diag),
                horizon,
                m: horizon * lipschitz.value,
                lipschitz,
                m_diag,
            })
        })
        .collect()
}

/// Integral-type series.
pub fn assemble_w(model: &SystemModel, cfg: &ConverseConfig) -> Result<ConstructedLyapunov, ConverseError> {
    cfg.validate()?;
    let rows = series_rows(model, cfg)?;
    let terms = (1..=cfg.k_max).map(|k| construct_vk_integral(model, k, cfg)).collect::<Result<_, _>>()?;
    Ok(ConstructedLyapunov {
        kind: SeriesKind::Integral,
        rows,
        rho: cfg.rho.clone(),
        terms: Terms::Integral(terms),
    })
}

/// Max-type series with the integral-type weights.
pub fn assemble_w_max(model: &SystemModel, cfg: &ConverseConfig) -> Result<ConstructedLyapunov, ConverseError> {
    cfg.validate()?;
    let rows = series_rows(model, cfg)?;
    let terms = (1..=cfg.k_max).map(|k| construct_vk_max(model, k, cfg)).collect::<Result<_, _>>()?;
    Ok(ConstructedLyapunov {
        kind: SeriesKind::Max,
        rows,
        rho: cfg.rho.clone(),
        terms: Terms::Max(terms),
    })
}
