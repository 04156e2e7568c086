use super::{converse_signals, ConverseConfig, ConverseError};
use crate::probes::Witness;
use crate::systems::{euclid, run_observed, DisturbanceSignal, SystemModel};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use std::ops::ControlFlow;
use std::sync::Arc;

/// Relative change under step halving above which a value is flagged.
pub const HALVING_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureCheck {
    pub value: f64,
    pub halved: f64,
    pub rel_change: f64,
    pub flagged: bool,
}

struct Shared {
    k: u32,
    cfg: Arc<ConverseConfig>,
    model: SystemModel,
    signals: Vec<DisturbanceSignal>,
}

impl Shared {
    fn new(model: &SystemModel, k: u32, cfg: &ConverseConfig) -> Result<Self, ConverseError> {
        cfg.validate()?;
        if k == 0 {
            return Err(ConverseError::InvalidConfig("k must be at least 1".into()));
        }
        Ok(Self {
            k,
            cfg: Arc::new(cfg.clone()),
            model: model.clone(),
            signals: converse_signals(model, cfg, cfg.horizon(cfg.radius, k)),
        })
    }

    /// (t, ρ(‖φ(t)‖) − 1/k) at every integrator node on [0, horizon].
    fn excess(&self, x: &[f64], d: &DisturbanceSignal, horizon: f64, step: f64) -> Result<Vec<(f64, f64)>, ConverseError> {
        let x0 = DVector::from_column_slice(x);
        let inv_k = 1.0 / self.k as f64;
        let mut out = Vec::new();
        let end = run_observed(&self.model, horizon, &x0, d, step, &[], &mut |t, s| {
            out.push((t, self.cfg.rho.eval(euclid(s)) - inv_k));
            ControlFlow::Continue(())
        })?;
        if let Some(b) = end.escaped {
            return Err(ConverseError::Escaped(Box::new(Witness {
                x: x.to_vec(),
                signal: d.clone(),
                t: b.first_over,
                norm: f64::INFINITY,
                reason: format!("escape before t = {}: the UGAS premise fails", b.first_over),
            })));
        }
        Ok(out)
    }

    fn max_over_signals(&self, f: impl Fn(&DisturbanceSignal) -> Result<f64, ConverseError> + Sync + Send) -> Result<f64, ConverseError> {
        let vals = self.signals.par_iter().map(f).collect::<Result<Vec<f64>, _>>()?;
        Ok(vals.into_iter().fold(0.0, f64::max))
    }
}

/// ∫ max(g, 0) for g linear between nodes; the clamp crossing is exact.
fn positive_part_trapezoid(samples: &[(f64, f64)]) -> f64 {
    samples
        .windows(2)
        .map(|w| {
            let ((t0, g0), (t1, g1)) = (w[0], w[1]);
            let dt = t1 - t0;
            match (g0 > 0.0, g1 > 0.0) {
                (true, true) => 0.5 * dt * (g0 + g1),
                (false, false) => 0.0,
                (true, false) => 0.5 * dt * g0 * g0 / (g0 - g1),
                (false, true) => 0.5 * dt * g1 * g1 / (g1 - g0),
            }
        })
        .sum()
}

/// V_k(x) = max over sampled d of ∫₀^{T(‖x‖,k)} G_k(ρ(‖φ(t,x,d)‖)) dt.
pub struct IntegralVk(Shared);

impl IntegralVk {
    pub fn k(&self) -> u32 {
        self.0.k
    }

    fn eval_with_step(&self, x: &[f64], step: f64) -> Result<f64, ConverseError> {
        let r = euclid(x);
        let horizon = self.0.cfg.horizon(r, self.0.k);
        if r == 0.0 || horizon == 0.0 {
            return Ok(0.0);
        }
        self.0
            .max_over_signals(|d| Ok(positive_part_trapezoid(&self.0.excess(x, d, horizon, step)?)))
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ConverseError> {
        self.eval_with_step(x, self.0.cfg.quadrature_step)
    }

    /// Value at the configured step and at half of it.
    pub fn eval_checked(&self, x: &[f64]) -> Result<QuadratureCheck, ConverseError> {
        let value = self.eval(x)?;
        let halved = self.eval_with_step(x, 0.5 * self.0.cfg.quadrature_step)?;
        let scale = value.abs().max(halved.abs());
        let rel_change = if scale > 0.0 { (value - halved).abs() / scale } else { 0.0 };
        Ok(QuadratureCheck {
            value,
            halved,
            rel_change,
            flagged: rel_change > HALVING_TOL,
        })
    }
}

/// V_k^η(x) = max over sampled d and integrator nodes s ≤ T(‖x‖,k)/(1−η)
/// of e^{ηs} G_k(ρ(‖φ(s,x,d)‖)).
pub struct MaxVk {
    inner: Shared,
    pub eta: f64,
}

impl MaxVk {
    pub fn k(&self) -> u32 {
        self.inner.k
    }

    /// Cut of the maximization window.
    pub fn cut(&self, r: f64) -> f64 {
        self.inner.cfg.horizon(r, self.inner.k) / (1.0 - self.eta)
    }

    pub fn cut_formula(&self) -> &'static str {
        "T(R,k)/(1-eta), T(R,k) = ln(1 + k alpha1(R))"
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ConverseError> {
        let r = euclid(x);
        if r == 0.0 {
            return Ok(0.0);
        }
        let s0 = (self.inner.cfg.rho.eval(r) - 1.0 / self.inner.k as f64).max(0.0);
        let cut = self.cut(r);
        if cut == 0.0 {
            return Ok(s0);
        }
        let eta = self.eta;
        let best = self.inner.max_over_signals(|d| {
            let ex = self.inner.excess(x, d, cut, self.inner.cfg.quadrature_step)?;
            Ok(ex.iter().map(|(t, g)| (eta * t).exp() * g.max(0.0)).fold(0.0, f64::max))
        })?;
        Ok(best.max(s0))
    }
}

pub fn construct_vk_integral(model: &SystemModel, k: u32, cfg: &ConverseConfig) -> Result<IntegralVk, ConverseError> {
    Ok(IntegralVk(Shared::new(model, k, cfg)?))
}

pub fn construct_vk_max(model: &SystemModel, k: u32, cfg: &ConverseConfig) -> Result<MaxVk, ConverseError> {
    Ok(MaxVk {
        inner: Shared::new(model, k, cfg)?,
        eta: cfg.eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comparison::TabulatedMonotone;
    use crate::models::{build_linear, build_scalar_example, ScalarVariant};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn cfg() -> ConverseConfig {
        let id = TabulatedMonotone::identity(10.0, 2);
        ConverseConfig::new(id.clone(), id)
    }

    fn decay() -> SystemModel {
        build_linear(&DMatrix::from_element(1, 1, -1.0))
    }

    /// ∫₀^{ln(kx)} (x e^{−t} − 1/k) dt.
    fn closed_form(x: f64, k: f64) -> f64 {
        if x * k <= 1.0 {
            0.0
        } else {
            x - 1.0 / k - (k * x).ln() / k
        }
    }

    #[test]
    fn integral_golden_value() {
        let v1 = construct_vk_integral(&decay(), 1, &cfg()).unwrap();
        let e = std::f64::consts::E;
        let v = v1.eval(&[e]).unwrap();
        assert!((v - (e - 2.0)).abs() < 1e-4, "{v}");
        let chk = v1.eval_checked(&[e]).unwrap();
        assert!(!chk.flagged, "{chk:?}");
        for k in 1..=4u32 {
            let vk = construct_vk_integral(&decay(), k, &cfg()).unwrap();
            for x in [0.1, 0.5, 1.0, 3.0, -2.0] {
                let got = vk.eval(&[x]).unwrap();
                assert!((got - closed_form(f64::abs(x), k as f64)).abs() < 1e-6, "k={k} x={x} {got}");
            }
        }
        assert_eq!(v1.eval(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn vanishes_inside_threshold_ball() {
        let v = construct_vk_integral(&decay(), 4, &cfg()).unwrap();
        assert_eq!(v.eval(&[0.25]).unwrap(), 0.0);
        assert_eq!(v.eval(&[0.2]).unwrap(), 0.0);
        let m = construct_vk_max(&decay(), 4, &cfg()).unwrap();
        assert_eq!(m.eval(&[0.25]).unwrap(), 0.0);
    }

    #[test]
    fn max_type_value_at_two() {
        // e^{s/2}(2e^{−s} − 1) is decreasing in s, so the max sits at s = 0
        let m = construct_vk_max(&decay(), 1, &cfg()).unwrap();
        let v = m.eval(&[2.0]).unwrap();
        assert_eq!(v, 1.0);
        let oracle = (0..=100_000).map(|i| i as f64 * 1e-4).map(|s| (s / 2.0f64).exp() * (2.0 * (-s).exp() - 1.0)).fold(f64::MIN, f64::max);
        assert!((v - oracle).abs() < 1e-12);
        assert!(m.cut(2.0) > 0.0 && !m.cut_formula().is_empty());
    }

    #[test]
    fn escape_refutes_premise() {
        let v = construct_vk_integral(&build_scalar_example(ScalarVariant::Ii), 1, &cfg()).unwrap();
        // d = 1 is a corner: ẋ = x grows but does not escape in finite time
        assert!(v.eval(&[1.0]).unwrap() > 0.0);
        use crate::systems::{DisturbanceSet, FnField};
        let sq = SystemModel::from_field("sq", FnField::new(1, |x, _, o| o[0] = x[0] * x[0]), DisturbanceSet::Trivial);
        let big = TabulatedMonotone::identity(10.0, 2);
        let c = ConverseConfig {
            alpha1: TabulatedMonotone::from_fn(vec![0.0, 1.0], crate::comparison::ClassTag::Kinf, |r| 1e3 * r).unwrap(),
            ..ConverseConfig::new(big.clone(), big)
        };
        let v = construct_vk_integral(&sq, 1, &c).unwrap();
        assert!(matches!(v.eval(&[2.0]), Err(ConverseError::Escaped(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]

        #[test]
        fn budget_never_decreases_vk(b in 0usize..4, extra in 1usize..4, x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let m = build_scalar_example(ScalarVariant::Iv);
            let id = TabulatedMonotone::identity(10.0, 2);
            let c1 = ConverseConfig { disturbance_budget: b, quadrature_step: 1e-2, ..ConverseConfig::new(id.clone(), id) };
            let c2 = ConverseConfig { disturbance_budget: b + extra, ..c1.clone() };
            let v1 = construct_vk_integral(&m, 2, &c1).unwrap();
            let v2 = construct_vk_integral(&m, 2, &c2).unwrap();
            prop_assert!(v2.eval(&[x, y][..1]).unwrap() >= v1.eval(&[x, y][..1]).unwrap());
        }
    }
}
