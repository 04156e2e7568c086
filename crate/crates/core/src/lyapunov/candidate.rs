use crate::comparison::TabulatedMonotone;
use nalgebra::DVector;
use std::fmt;
use std::sync::Arc;

pub type StateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Analytic derivative `V̇_d(x)` along the model's rhs.
pub type DerivativeFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// A scalar functional V on states with optional sandwich and decay data.
/// Without `psi1` the candidate is non-coercive.
#[derive(Clone)]
pub struct LyapunovCandidate {
    pub name: String,
    eval: StateFn,
    pub psi1: Option<TabulatedMonotone>,
    pub psi2: Option<TabulatedMonotone>,
    pub alpha: Option<TabulatedMonotone>,
    pub derivative: Option<DerivativeFn>,
    /// Unit directions where V is known to be small relative to the norm.
    pub witness_directions: Vec<DVector<f64>>,
}

impl fmt::Debug for LyapunovCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LyapunovCandidate")
            .field("name", &self.name)
            .field("coercive", &self.psi1.is_some())
            .field("has_psi2", &self.psi2.is_some())
            .field("has_alpha", &self.alpha.is_some())
            .field("witnesses", &self.witness_directions.len())
            .finish()
    }
}

impl LyapunovCandidate {
    pub fn new(name: impl Into<String>, eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            eval: Arc::new(eval),
            psi1: None,
            psi2: None,
            alpha: None,
            derivative: None,
            witness_directions: Vec::new(),
        }
    }

    /// `V(x) = ‖x‖²`.
    pub fn squared_norm() -> Self {
        Self::new("squared-norm", |x| x.iter().map(|v| v * v).sum())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn with_psi1(mut self, t: TabulatedMonotone) -> Self {
        self.psi1 = Some(t);
        self
    }

    pub fn with_psi2(mut self, t: TabulatedMonotone) -> Self {
        self.psi2 = Some(t);
        self
    }

    pub fn with_alpha(mut self, t: TabulatedMonotone) -> Self {
        self.alpha = Some(t);
        self
    }

    pub fn with_derivative(mut self, f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        self.derivative = Some(Arc::new(f));
        self
    }

    pub fn with_witnesses(mut self, w: Vec<DVector<f64>>) -> Self {
        self.witness_directions = w;
        self
    }

    pub fn is_coercive(&self) -> bool {
        self.psi1.is_some()
    }
}
