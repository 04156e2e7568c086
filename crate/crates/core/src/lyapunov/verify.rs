use super::LyapunovCandidate;
use crate::comparison::TabulatedMonotone;
use crate::csvfmt::fmt_f64;
use crate::systems::sampling::{sample_rng, subseed, unit_direction};
use crate::systems::{euclid, flow, flow_at, DisturbanceSignal, EscapeBracket, SystemError, SystemModel};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LyapunovError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("trajectory from {x:?} escaped in ({}, {}]", bracket.last_finite, bracket.first_over)]
    Escaped { x: Vec<f64>, bracket: EscapeBracket },
    #[error("i/o: {0}")]
    Io(String),
}

impl From<csv::Error> for LyapunovError {
    fn from(e: csv::Error) -> Self {
        LyapunovError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for LyapunovError {
    fn from(e: serde_json::Error) -> Self {
        LyapunovError::Io(e.to_string())
    }
}

/// Geometric difference-step sequence `h0·ratio^k`, `k < terms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiniOptions {
    pub h0: f64,
    pub ratio: f64,
    pub terms: usize,
}

impl Default for DiniOptions {
    fn default() -> Self {
        Self {
            h0: 1e-2,
            ratio: 0.5,
            terms: 8,
        }
    }
}

impl DiniOptions {
    pub fn sequence(&self) -> Vec<f64> {
        (0..self.terms).map(|k| self.h0 * self.ratio.powi(k as i32)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiniEstimate {
    /// Minimum quotient over the sequence.
    pub value: f64,
    /// `(h, (V(φ(h)) − V(x)) / h)` in the order given.
    pub quotients: Vec<(f64, f64)>,
}

/// Lower right Dini derivative of V along φ(·, x, d), estimated by the
/// smallest forward quotient over `hs`. The flow is integrated with a step
/// one tenth of the smallest h.
pub fn dini_derivative(
    v: &LyapunovCandidate,
    model: &SystemModel,
    x: &DVector<f64>,
    d: &DisturbanceSignal,
    hs: &[f64],
) -> Result<DiniEstimate, LyapunovError> {
    if hs.is_empty() {
        return Err(LyapunovError::InvalidArgument("empty h sequence".into()));
    }
    if hs.iter().any(|h| !(*h > 0.0) || !h.is_finite()) || hs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(LyapunovError::InvalidArgument("h sequence must be positive and strictly decreasing".into()));
    }
    let h_min = hs[hs.len() - 1];
    let mut times = hs.to_vec();
    times.reverse();
    let (states, esc) = flow_at(model, &times, x, d, h_min / 10.0)?;
    if let Some(bracket) = esc {
        return Err(LyapunovError::Escaped {
            x: x.as_slice().to_vec(),
            bracket,
        });
    }
    let v0 = v.eval(x.as_slice());
    let mut quotients: Vec<(f64, f64)> = times
        .iter()
        .zip(&states)
        .map(|(h, s)| (*h, (v.eval(s.as_slice()) - v0) / h))
        .collect();
    quotients.reverse();
    let value = quotients.iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
    Ok(DiniEstimate { value, quotients })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "no violation found")]
    NoViolationFound,
    #[serde(rename = "violation found")]
    ViolationFound,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self == Verdict::NoViolationFound
    }

    pub fn text(self) -> &'static str {
        match self {
            Verdict::NoViolationFound => "no violation found",
            Verdict::ViolationFound => "violation found",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySample {
    pub x: Vec<f64>,
    pub signal: DisturbanceSignal,
    #[serde(with = "crate::csvfmt::json_f64")]
    pub dini: f64,
    /// `−α(‖x‖)`.
    pub bound: f64,
    /// `(dini − bound) / (|bound| + 1e-9)`; `+∞` for escaped samples.
    #[serde(with = "crate::csvfmt::json_f64")]
    pub margin: f64,
    pub escaped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub samples: Vec<DecaySample>,
    #[serde(with = "crate::csvfmt::json_f64")]
    pub worst_margin: f64,
    pub worst_index: Option<usize>,
    pub tol: f64,
    pub verdict: Verdict,
}

impl DecayReport {
    pub fn worst(&self) -> Option<&DecaySample> {
        self.worst_index.map(|i| &self.samples[i])
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<(), LyapunovError> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// One row per sample: `index,norm,dini,bound,margin,escaped`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), LyapunovError> {
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(["index", "norm", "dini", "bound", "margin", "escaped"])?;
        for (i, s) in self.samples.iter().enumerate() {
            cw.write_record([
                i.to_string(),
                fmt_f64(euclid(&s.x)),
                fmt_f64(s.dini),
                fmt_f64(s.bound),
                fmt_f64(s.margin),
                s.escaped.to_string(),
            ])?;
        }
        cw.flush().map_err(|e| LyapunovError::Io(e.to_string()))?;
        Ok(())
    }
}

pub const DEFAULT_DECAY_TOL: f64 = 1e-3;

/// Checks `D⁺V_d(x) ≤ −α(‖x‖)` on every pair of `states × signals`.
pub fn verify_decay(
    v: &LyapunovCandidate,
    alpha: &TabulatedMonotone,
    model: &SystemModel,
    states: &[DVector<f64>],
    signals: &[DisturbanceSignal],
    tol: f64,
    opts: &DiniOptions,
) -> Result<DecayReport, LyapunovError> {
    if states.is_empty() || signals.is_empty() {
        return Err(LyapunovError::InvalidArgument("need at least one state and one signal".into()));
    }
    let hs = opts.sequence();
    let pairs: Vec<(usize, usize)> = (0..states.len())
        .flat_map(|i| (0..signals.len()).map(move |j| (i, j)))
        .collect();
    let samples: Vec<DecaySample> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (x, d) = (&states[i], &signals[j]);
            let bound = -alpha.eval(euclid(x.as_slice()));
            let (dini, escaped) = match dini_derivative(v, model, x, d, &hs) {
                Ok(e) => (e.value, false),
                Err(LyapunovError::Escaped { .. }) => (f64::INFINITY, true),
                Err(e) => return Err(e),
            };
            let margin = if escaped {
                f64::INFINITY
            } else {
                (dini - bound) / (bound.abs() + 1e-9)
            };
            Ok(DecaySample {
                x: x.as_slice().to_vec(),
                signal: d.clone(),
                dini,
                bound,
                margin,
                escaped,
            })
        })
        .collect::<Result<_, LyapunovError>>()?;
    let mut worst_margin = f64::NEG_INFINITY;
    let mut worst_index = None;
    for (i, s) in samples.iter().enumerate() {
        if s.margin > worst_margin || s.margin.is_nan() {
            worst_margin = s.margin;
            worst_index = Some(i);
        }
    }
    let verdict = if worst_margin <= tol {
        Verdict::NoViolationFound
    } else {
        Verdict::ViolationFound
    };
    Ok(DecayReport {
        samples,
        worst_margin,
        worst_index,
        tol,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralBoundReport {
    pub v0: f64,
    /// `∫₀ᵀ α(‖φ(s)‖) ds` by composite trapezoid.
    pub integral: f64,
    pub tol: f64,
    /// `V(x) + tol − integral`.
    pub slack: f64,
    /// Largest `V(φ(t)) − V(x) + ∫₀ᵗ α(‖φ‖)` over sample times.
    pub worst_intermediate: f64,
    pub worst_intermediate_t: f64,
    pub holds: bool,
    pub intermediate_holds: bool,
}

impl IntegralBoundReport {
    pub fn passed(&self) -> bool {
        self.holds && self.intermediate_holds
    }
}

/// Checks `∫₀ᵀ α(‖φ(s, x, d)‖) ds ≤ V(x)` and the running form
/// `V(φ(t)) − V(x) ≤ −∫₀ᵗ α(‖φ‖)` on the integrator's sample points, with
/// slack `1e-4·V(x) + 1e-9`.
pub fn verify_integral_bound(
    v: &LyapunovCandidate,
    alpha: &TabulatedMonotone,
    model: &SystemModel,
    x: &DVector<f64>,
    d: &DisturbanceSignal,
    horizon: f64,
    quadrature_step: f64,
) -> Result<IntegralBoundReport, LyapunovError> {
    let tr = flow(model, horizon, x, d, quadrature_step)?;
    if let Some(bracket) = tr.escaped {
        return Err(LyapunovError::Escaped {
            x: x.as_slice().to_vec(),
            bracket,
        });
    }
    let v0 = v.eval(x.as_slice());
    let tol = 1e-4 * v0 + 1e-9;
    let mut g = 0.0;
    let mut prev = alpha.eval(euclid(x.as_slice()));
    let mut worst = f64::NEG_INFINITY;
    let mut worst_t = 0.0;
    for w in 0..tr.times.len() {
        if w > 0 {
            let a = alpha.eval(euclid(tr.states[w].as_slice()));
            g += 0.5 * (tr.times[w] - tr.times[w - 1]) * (prev + a);
            prev = a;
        }
        let r = v.eval(tr.states[w].as_slice()) - v0 + g;
        if r > worst {
            worst = r;
            worst_t = tr.times[w];
        }
    }
    Ok(IntegralBoundReport {
        v0,
        integral: g,
        tol,
        slack: v0 + tol - g,
        worst_intermediate: worst,
        worst_intermediate_t: worst_t,
        holds: g <= v0 + tol,
        intermediate_holds: worst <= tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoercivityOptions {
    pub seed: u64,
    /// Non-coercivity is flagged when the last witness value at a radius
    /// falls below this fraction of the sup there.
    pub fraction: f64,
}

impl Default for CoercivityOptions {
    fn default() -> Self {
        Self { seed: 0, fraction: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoercivityRow {
    pub radius: f64,
    pub inf: f64,
    pub sup: f64,
    /// `V(r·w_i)` along the candidate's witness directions, in order.
    pub witness_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoercivityProfile {
    pub rows: Vec<CoercivityRow>,
    pub non_coercive: bool,
}

/// Inf/sup of V over spheres, sampled along the candidate's witness
/// directions plus `direction_budget` seeded random unit directions.
/// Larger budgets extend the same direction sequence.
pub fn coercivity_profile(
    v: &LyapunovCandidate,
    model: &SystemModel,
    radii: &[f64],
    direction_budget: usize,
    opts: &CoercivityOptions,
) -> Result<CoercivityProfile, LyapunovError> {
    if radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(LyapunovError::InvalidArgument("radii must be positive".into()));
    }
    let dim = model.dim();
    if let Some(w) = v.witness_directions.iter().find(|w| w.len() != dim) {
        return Err(SystemError::Dimension {
            expected: dim,
            got: w.len(),
        }
        .into());
    }
    let random: Vec<DVector<f64>> = (0..direction_budget as u64)
        .map(|i| unit_direction(&mut sample_rng(subseed(opts.seed, 0xC0), i), dim))
        .collect();
    let rows: Vec<CoercivityRow> = radii
        .iter()
        .map(|&r| {
            let witness_values: Vec<f64> = v
                .witness_directions
                .par_iter()
                .map(|w| v.eval((w * r).as_slice()))
                .collect();
            let rand_vals: Vec<f64> = random.par_iter().map(|u| v.eval((u * r).as_slice())).collect();
            let all = witness_values.iter().chain(&rand_vals);
            let inf = all.clone().copied().fold(f64::INFINITY, f64::min);
            let sup = all.copied().fold(f64::NEG_INFINITY, f64::max);
            CoercivityRow {
                radius: r,
                inf,
                sup,
                witness_values,
            }
        })
        .collect();
    let non_coercive = rows.iter().any(|row| match (row.witness_values.first(), row.witness_values.last()) {
        (Some(first), Some(last)) => row.witness_values.len() > 1 && last < first && *last <= opts.fraction * row.sup,
        _ => false,
    });
    Ok(CoercivityProfile { rows, non_coercive })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comparison::ClassTag;
    use crate::models::BlockOperatorModel;
    use crate::systems::{DisturbanceSet, FnField};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn decay() -> SystemModel {
        SystemModel::from_field("decay", FnField::new(1, |x, _, o| o[0] = -x[0]), DisturbanceSet::Trivial)
    }

    fn quad_alpha(c: f64) -> TabulatedMonotone {
        let grid: Vec<f64> = (0..=4000).map(|i| i as f64 * 1e-3).collect();
        TabulatedMonotone::from_fn(grid, ClassTag::Kinf, |s| c * s * s).unwrap()
    }

    fn one(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn zero_d() -> DisturbanceSignal {
        DisturbanceSignal::constant(0.0)
    }

    #[test]
    fn dini_of_square_along_decay() {
        let hs: Vec<f64> = (0..8).map(|k| 1e-3 * 0.5f64.powi(k)).collect();
        let e = dini_derivative(&LyapunovCandidate::squared_norm(), &decay(), &one(1.0), &zero_d(), &hs).unwrap();
        assert!((e.value + 2.0).abs() <= 1e-4, "{}", e.value);
        assert_eq!(e.quotients.len(), 8);
        assert_eq!(e.quotients[0].0, 1e-3);
        let z = dini_derivative(&LyapunovCandidate::squared_norm(), &decay(), &one(0.0), &zero_d(), &hs).unwrap();
        assert_eq!(z.value, 0.0);
    }

    #[test]
    fn dini_rejects_bad_sequences() {
        let v = LyapunovCandidate::squared_norm();
        assert!(dini_derivative(&v, &decay(), &one(1.0), &zero_d(), &[]).is_err());
        assert!(dini_derivative(&v, &decay(), &one(1.0), &zero_d(), &[1e-3, 1e-2]).is_err());
    }

    #[test]
    fn dini_escape_is_an_error() {
        let m = SystemModel::from_field("sq", FnField::new(1, |x, _, o| o[0] = x[0] * x[0]), DisturbanceSet::Trivial);
        let r = dini_derivative(&LyapunovCandidate::squared_norm(), &m, &one(1e3), &zero_d(), &[1e-2, 5e-3]);
        assert!(matches!(r, Err(LyapunovError::Escaped { .. })));
    }

    #[test]
    fn block_dini_below_minus_v() {
        let b = Arc::new(BlockOperatorModel::new(8, 0.0).unwrap());
        let (m, v) = (b.to_system(), b.candidate());
        let mut rng = sample_rng(7, 0);
        for _ in 0..5 {
            let x = unit_direction(&mut rng, b.dim());
            let e = dini_derivative(&v, &m, &x, &zero_d(), &DiniOptions::default().sequence()).unwrap();
            let vx = v.eval(x.as_slice());
            assert!(e.value <= -vx + 1e-3 * vx, "{} vs {}", e.value, -vx);
        }
    }

    #[test]
    fn decay_equality_case_passes_and_strict_case_fails() {
        let states: Vec<_> = [0.0, 0.3, 1.0, -2.0].iter().map(|&v| one(v)).collect();
        let v = LyapunovCandidate::squared_norm();
        let rep = verify_decay(&v, &quad_alpha(2.0), &decay(), &states, &[zero_d()], DEFAULT_DECAY_TOL, &DiniOptions::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::NoViolationFound);
        assert!(rep.worst_margin.abs() < 1e-3, "{}", rep.worst_margin);
        let rep = verify_decay(&v, &quad_alpha(3.0), &decay(), &states, &[zero_d()], DEFAULT_DECAY_TOL, &DiniOptions::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::ViolationFound);
        let w = rep.worst().unwrap();
        assert!(w.x[0] != 0.0);
        let js = serde_json::to_string(&rep).unwrap();
        assert!(js.contains("\"violation found\""));
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }

    #[test]
    fn escaped_samples_fail_with_witness() {
        let m = SystemModel::from_field("sq", FnField::new(1, |x, _, o| o[0] = x[0] * x[0]), DisturbanceSet::Trivial);
        let rep = verify_decay(
            &LyapunovCandidate::squared_norm(),
            &quad_alpha(1.0),
            &m,
            &[one(1e3)],
            &[zero_d()],
            DEFAULT_DECAY_TOL,
            &DiniOptions::default(),
        )
        .unwrap();
        assert_eq!(rep.verdict, Verdict::ViolationFound);
        assert!(rep.worst().unwrap().escaped);
    }

    #[test]
    fn integral_bound_closed_form() {
        let v = LyapunovCandidate::squared_norm();
        let r = verify_integral_bound(&v, &quad_alpha(2.0), &decay(), &one(1.0), &zero_d(), 10.0, 1e-3).unwrap();
        assert_relative_eq!(r.integral, 1.0 - (-20.0f64).exp(), epsilon = 1e-5);
        assert!(r.passed(), "{r:?}");
        let r = verify_integral_bound(&v, &quad_alpha(2.0), &decay(), &one(0.0), &zero_d(), 10.0, 1e-3).unwrap();
        assert_eq!(r.integral, 0.0);
        assert!(r.passed());
    }

    #[test]
    fn integral_bound_block_model() {
        let b = Arc::new(BlockOperatorModel::new(6, 0.0).unwrap());
        let floor = (1..=6).map(|i| b.lambda_min(i)).fold(f64::INFINITY, f64::min);
        let alpha = quad_alpha(floor);
        let mut rng = sample_rng(3, 0);
        for _ in 0..3 {
            let x = unit_direction(&mut rng, b.dim());
            let r = verify_integral_bound(&b.candidate(), &alpha, &b.to_system(), &x, &zero_d(), 5.0, 1e-2).unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn integral_bound_escape_is_error() {
        let m = SystemModel::from_field("sq", FnField::new(1, |x, _, o| o[0] = x[0] * x[0]), DisturbanceSet::Trivial);
        let r = verify_integral_bound(&LyapunovCandidate::squared_norm(), &quad_alpha(1.0), &m, &one(1.0), &zero_d(), 2.0, 1e-3);
        assert!(matches!(r, Err(LyapunovError::Escaped { .. })));
    }

    #[test]
    fn profile_of_coercive_squares() {
        let m = decay();
        let p = coercivity_profile(&LyapunovCandidate::squared_norm(), &m, &[0.5, 2.0], 10, &CoercivityOptions::default()).unwrap();
        for row in &p.rows {
            assert_eq!(row.inf, row.radius * row.radius);
            assert_eq!(row.sup, row.radius * row.radius);
        }
        assert!(!p.non_coercive);
        let m3 = SystemModel::from_field("z3", FnField::new(3, |_, _, o| o.fill(0.0)), DisturbanceSet::Trivial);
        let p = coercivity_profile(&LyapunovCandidate::squared_norm(), &m3, &[1.0], 50, &CoercivityOptions::default()).unwrap();
        assert_relative_eq!(p.rows[0].inf, 1.0, epsilon = 1e-14);
        assert_relative_eq!(p.rows[0].sup, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn block_profile_finds_small_witness() {
        let b = Arc::new(BlockOperatorModel::new(12, 0.0).unwrap());
        let p = coercivity_profile(&b.candidate(), &b.to_system(), &[1.0], 20, &CoercivityOptions::default()).unwrap();
        assert_relative_eq!(p.rows[0].inf, b.lambda_min(12), max_relative = 1e-6);
        assert!(p.non_coercive);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn dini_matches_quadratic_form(a in proptest::collection::vec(-1.0f64..1.0, 4), x in proptest::collection::vec(-1.0f64..1.0, 2)) {
            let m = crate::models::build_linear(&nalgebra::DMatrix::from_row_slice(2, 2, &a));
            let xv = DVector::from_vec(x.clone());
            let e = dini_derivative(&LyapunovCandidate::squared_norm(), &m, &xv, &zero_d(), &DiniOptions::default().sequence()).unwrap();
            let exact = 2.0 * (x[0] * (a[0] * x[0] + a[1] * x[1]) + x[1] * (a[2] * x[0] + a[3] * x[1]));
            // O(h) bias with h ≤ 1e-2 and ‖A‖ ≤ 2
            prop_assert!((e.value - exact).abs() <= 1e-2 * 8.0 * xv.norm_squared() + 1e-12);
        }

        #[test]
        fn profile_is_monotone_in_budget(b1 in 1usize..20, extra in 1usize..20, seed in 0u64..50) {
            let bm = Arc::new(BlockOperatorModel::new(4, 0.0).unwrap());
            let (v, m) = (bm.candidate(), bm.to_system());
            let o = CoercivityOptions { seed, ..Default::default() };
            let p1 = coercivity_profile(&v, &m, &[1.0, 3.0], b1, &o).unwrap();
            let p2 = coercivity_profile(&v, &m, &[1.0, 3.0], b1 + extra, &o).unwrap();
            for (a, b) in p1.rows.iter().zip(&p2.rows) {
                prop_assert!(b.inf <= a.inf && b.sup >= a.sup);
            }
        }

        #[test]
        fn decay_pass_implies_integral_slack(x0 in -3.0f64..3.0) {
            let v = LyapunovCandidate::squared_norm();
            let alpha = quad_alpha(1.5);
            let rep = verify_decay(&v, &alpha, &decay(), &[one(x0)], &[zero_d()], DEFAULT_DECAY_TOL, &DiniOptions::default()).unwrap();
            prop_assert!(rep.verdict.passed());
            let r = verify_integral_bound(&v, &alpha, &decay(), &one(x0), &zero_d(), 4.0, 1e-3).unwrap();
            prop_assert!(r.slack >= 0.0);
        }
    }
}
