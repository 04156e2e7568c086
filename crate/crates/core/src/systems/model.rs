use super::{DisturbanceSignal, SystemError};
use crate::models::ModelDescriptor;
use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Right-hand side `f(x, d)` of an ODE model.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], d: f64, out: &mut [f64]);
    /// Applied after every integrator step of length `h`; `prev` is the
    /// state before it.
    fn project(&self, _prev: &[f64], _d: f64, _h: f64, _next: &mut [f64]) {}
}

/// Wraps a field whose coordinate hyperplanes {x_i = 0} are invariant and
/// reached in finite time (odd-root dissipation). A coordinate is set to 0,
/// where the exact flow comes to rest, when the step changed its sign or an
/// Euler predictor from `prev` would have crossed 0.
pub struct SignAbsorbing<F>(pub F);

impl<F: VectorField> VectorField for SignAbsorbing<F> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn eval(&self, x: &[f64], d: f64, out: &mut [f64]) {
        self.0.eval(x, d, out)
    }
    fn project(&self, prev: &[f64], d: f64, h: f64, next: &mut [f64]) {
        let mut f = vec![0.0; prev.len()];
        self.0.eval(prev, d, &mut f);
        for ((p, n), fi) in prev.iter().zip(next.iter_mut()).zip(&f) {
            if *p == 0.0 || *p * *n < 0.0 || *p * (*p + h * fi) < 0.0 {
                *n = 0.0;
            }
        }
    }
}

/// Closure-backed vector field.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64], f64, &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], d: f64, out: &mut [f64]) {
        (self.f)(x, d, out)
    }
}

/// Linear evolution families evaluated exactly (no time stepping).
pub trait LinearFlow: Send + Sync {
    fn dim(&self) -> usize;
    /// State at `t1` given the state at `t0 <= t1`, driven by the pieces of `d`.
    fn propagate(
        &self,
        x: &DVector<f64>,
        d: &DisturbanceSignal,
        t0: f64,
        t1: f64,
    ) -> Result<DVector<f64>, SystemError>;
}

#[derive(Clone)]
pub enum Dynamics {
    Field(Arc<dyn VectorField>),
    Linear(Arc<dyn LinearFlow>),
}

impl fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dynamics::Field(v) => write!(f, "Field(dim={})", v.dim()),
            Dynamics::Linear(v) => write!(f, "Linear(dim={})", v.dim()),
        }
    }
}

/// The value set D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceSet {
    /// The model ignores its disturbance.
    Trivial,
    Interval { lo: f64, hi: f64 },
    /// All of ℝ; probes sweep a magnitude bound.
    Real,
    Finite { values: Vec<f64> },
    /// Mode indices `0..count` of a switched model.
    Modes { count: usize },
}

impl DisturbanceSet {
    pub fn is_bounded(&self) -> bool {
        !matches!(self, DisturbanceSet::Real)
    }

    pub fn contains(&self, v: f64) -> bool {
        match self {
            DisturbanceSet::Trivial => true,
            DisturbanceSet::Interval { lo, hi } => *lo <= v && v <= *hi,
            DisturbanceSet::Real => v.is_finite(),
            DisturbanceSet::Finite { values } => values.contains(&v),
            DisturbanceSet::Modes { count } => v >= 0.0 && v.fract() == 0.0 && (v as usize) < *count,
        }
    }

    /// Extreme constant values: interval ends and 0, finite members,
    /// `{-m, 0, m}` for ℝ at magnitude `m`.
    pub fn corners(&self, magnitude: f64) -> Vec<f64> {
        match self {
            DisturbanceSet::Trivial => vec![0.0],
            DisturbanceSet::Interval { lo, hi } => {
                let mut v = vec![*lo, *hi];
                if *lo < 0.0 && *hi > 0.0 {
                    v.push(0.0);
                }
                v
            }
            DisturbanceSet::Real => vec![-magnitude, 0.0, magnitude],
            DisturbanceSet::Finite { values } => values.clone(),
            DisturbanceSet::Modes { count } => (0..*count).map(|i| i as f64).collect(),
        }
    }

    /// Uniform draw from D (from `[-m, m]` for ℝ).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, magnitude: f64) -> f64 {
        match self {
            DisturbanceSet::Trivial => 0.0,
            DisturbanceSet::Interval { lo, hi } => {
                if hi > lo {
                    rng.random_range(*lo..=*hi)
                } else {
                    *lo
                }
            }
            DisturbanceSet::Real => rng.random_range(-magnitude..=magnitude),
            DisturbanceSet::Finite { values } => values[rng.random_range(0..values.len())],
            DisturbanceSet::Modes { count } => rng.random_range(0..*count) as f64,
        }
    }

    /// Largest `|d|` reachable at sweep level `magnitude`.
    pub fn magnitude_bound(&self, magnitude: f64) -> f64 {
        match self {
            DisturbanceSet::Trivial | DisturbanceSet::Modes { .. } => 0.0,
            DisturbanceSet::Interval { lo, hi } => lo.abs().max(hi.abs()),
            DisturbanceSet::Real => magnitude,
            DisturbanceSet::Finite { values } => values.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        }
    }
}

/// Local Lipschitz constant of the rhs on the ball of the given radius for
/// disturbances bounded by the given magnitude.
pub type LipschitzHint = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

pub const DEFAULT_EXPLOSION_THRESHOLD: f64 = 1e12;

/// A simulatable system Σ = (X, 𝒟, φ) with X = ℝⁿ under the Euclidean norm.
#[derive(Clone)]
pub struct SystemModel {
    pub name: String,
    pub dynamics: Dynamics,
    pub disturbance_set: DisturbanceSet,
    pub lipschitz_hint: Option<LipschitzHint>,
    /// 0 is declared an equilibrium for every disturbance.
    pub equilibrium_at_zero: bool,
    /// Declared homogeneous of degree one (`φ(t, λx, d) = λφ(t, x, d)`).
    pub homogeneous: bool,
    pub explosion_threshold: f64,
    pub descriptor: Option<ModelDescriptor>,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("dynamics", &self.dynamics)
            .field("disturbance_set", &self.disturbance_set)
            .field("equilibrium_at_zero", &self.equilibrium_at_zero)
            .field("homogeneous", &self.homogeneous)
            .finish()
    }
}

impl SystemModel {
    pub fn from_field(name: impl Into<String>, field: impl VectorField + 'static, set: DisturbanceSet) -> Self {
        Self::new(name, Dynamics::Field(Arc::new(field)), set)
    }

    pub fn new(name: impl Into<String>, dynamics: Dynamics, set: DisturbanceSet) -> Self {
        Self {
            name: name.into(),
            dynamics,
            disturbance_set: set,
            lipschitz_hint: None,
            equilibrium_at_zero: true,
            homogeneous: false,
            explosion_threshold: DEFAULT_EXPLOSION_THRESHOLD,
            descriptor: None,
        }
    }

    pub fn with_lipschitz_hint(mut self, hint: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.lipschitz_hint = Some(Arc::new(hint));
        self
    }

    pub fn with_homogeneous(mut self, h: bool) -> Self {
        self.homogeneous = h;
        self
    }

    pub fn with_equilibrium(mut self, e: bool) -> Self {
        self.equilibrium_at_zero = e;
        self
    }

    pub fn with_descriptor(mut self, d: ModelDescriptor) -> Self {
        self.descriptor = Some(d);
        self
    }

    pub fn dim(&self) -> usize {
        match &self.dynamics {
            Dynamics::Field(f) => f.dim(),
            Dynamics::Linear(l) => l.dim(),
        }
    }

    pub fn norm(&self, x: &[f64]) -> f64 {
        euclid(x)
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.dynamics, Dynamics::Linear(_))
    }

    /// Checks `f(0, d) = 0` on the corner disturbances for field models.
    pub fn check_equilibrium(&self, magnitude: f64) -> bool {
        match &self.dynamics {
            Dynamics::Linear(_) => true,
            Dynamics::Field(f) => {
                let z = vec![0.0; f.dim()];
                let mut out = vec![0.0; f.dim()];
                self.disturbance_set.corners(magnitude).into_iter().all(|d| {
                    f.eval(&z, d, &mut out);
                    out.iter().all(|v| *v == 0.0)
                })
            }
        }
    }
}

pub fn euclid(x: &[f64]) -> f64 {
    // scaled to avoid overflow on escaping states
    let m = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * x.iter().map(|v| (v / m) * (v / m)).sum::<f64>().sqrt()
}
