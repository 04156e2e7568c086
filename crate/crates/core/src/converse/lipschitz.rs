use super::{converse_signals, ConverseConfig, ConverseError};
use crate::probes::Witness;
use crate::systems::sampling::{in_ball, sample_rng, subseed};
use crate::systems::{euclid, run_observed, DisturbanceSignal, SystemModel};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use std::ops::ControlFlow;

const CHECKPOINTS: usize = 21;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowLipschitz {
    /// max ‖φ(t,x,d) − φ(t,y,d)‖/‖x − y‖ over the samples.
    pub empirical: f64,
    /// e^{Lτ} from the model's Lipschitz hint on the sampled reach.
    pub gronwall: Option<f64>,
    /// Larger of the two.
    pub value: f64,
}

struct Sampled {
    states: Vec<DVector<f64>>,
    reach: f64,
}

fn sample_states(
    model: &SystemModel,
    x: &DVector<f64>,
    d: &DisturbanceSignal,
    times: &[f64],
    step: f64,
) -> Result<Sampled, ConverseError> {
    let mut states = Vec::with_capacity(times.len());
    let mut reach: f64 = 0.0;
    let horizon = *times.last().expect("non-empty");
    let end = run_observed(model, horizon, x, d, step, times, &mut |t, s| {
        reach = reach.max(euclid(s));
        if states.len() < times.len() && times[states.len()] == t {
            states.push(DVector::from_column_slice(s));
        }
        ControlFlow::Continue(())
    })?;
    if let Some(b) = end.escaped {
        return Err(ConverseError::Escaped(Box::new(Witness {
            x: x.as_slice().to_vec(),
            signal: d.clone(),
            t: b.first_over,
            norm: f64::INFINITY,
            reason: format!("escape before t = {} while estimating the flow Lipschitz constant", b.first_over),
        })));
    }
    Ok(Sampled { states, reach })
}

/// Flow Lipschitz constant L(R, τ) on the ball of radius `radius` over
/// `[0, tau]`, from sampled pairs x ≠ y and the configured disturbances.
pub fn estimate_flow_lipschitz(
    model: &SystemModel,
    radius: f64,
    tau: f64,
    cfg: &ConverseConfig,
) -> Result<FlowLipschitz, ConverseError> {
    if !(radius > 0.0) || !(tau >= 0.0) || !tau.is_finite() {
        return Err(ConverseError::InvalidConfig("radius must be positive and tau nonnegative".into()));
    }
    if tau == 0.0 {
        return Ok(FlowLipschitz {
            empirical: 1.0,
            gronwall: Some(1.0),
            value: 1.0,
        });
    }
    let dim = model.dim();
    let signals = converse_signals(model, cfg, tau);
    let mut pairs: Vec<(DVector<f64>, DVector<f64>)> = (0..dim)
        .map(|i| {
            let mut x = DVector::zeros(dim);
            x[i] = radius;
            (x.clone(), x * 0.5)
        })
        .collect();
    let stream = subseed(cfg.seed, 0x11b);
    pairs.extend((0..cfg.disturbance_budget.max(8) as u64).map(|i| {
        let mut rng = sample_rng(stream, i);
        (in_ball(&mut rng, dim, radius), in_ball(&mut rng, dim, radius))
    }));
    let times: Vec<f64> = (0..CHECKPOINTS).map(|j| tau * j as f64 / (CHECKPOINTS - 1) as f64).collect();
    let step = cfg.quadrature_step;
    let jobs: Vec<(usize, usize)> = (0..pairs.len()).flat_map(|p| (0..signals.len()).map(move |s| (p, s))).collect();
    let results: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(p, s)| {
            let (x, y) = &pairs[p];
            let dx = (x - y).norm();
            if dx == 0.0 {
                return Ok((0.0, 0.0));
            }
            let a = sample_states(model, x, &signals[s], &times, step)?;
            let b = sample_states(model, y, &signals[s], &times, step)?;
            let ratio = a.states.iter().zip(&b.states).map(|(u, v)| (u - v).norm() / dx).fold(0.0, f64::max);
            Ok((ratio, a.reach.max(b.reach)))
        })
        .collect::<Result<_, ConverseError>>()?;
    let empirical = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let reach = results.iter().map(|r| r.1).fold(radius, f64::max);
    let gronwall = model.lipschitz_hint.as_ref().map(|h| {
        let l = h(reach, model.disturbance_set.magnitude_bound(1.0));
        (l.max(0.0) * tau).exp()
    });
    Ok(FlowLipschitz {
        empirical,
        gronwall,
        value: gronwall.map_or(empirical, |g| g.max(empirical)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comparison::TabulatedMonotone;
    use crate::models::build_linear;
    use nalgebra::DMatrix;

    fn cfg() -> ConverseConfig {
        let id = TabulatedMonotone::identity(10.0, 2);
        ConverseConfig::new(id.clone(), id)
    }

    #[test]
    fn contraction_expansion_and_identity() {
        let m = build_linear(&DMatrix::from_element(1, 1, -1.0));
        let l = estimate_flow_lipschitz(&m, 2.0, 3.0, &cfg()).unwrap();
        assert!((l.empirical - 1.0).abs() < 1e-12);
        let m = build_linear(&DMatrix::from_element(1, 1, 1.0));
        let l = estimate_flow_lipschitz(&m, 1.0, 1.0, &cfg()).unwrap();
        assert!((l.empirical - std::f64::consts::E).abs() < 1e-9, "{}", l.empirical);
        assert!((l.value - std::f64::consts::E).abs() < 1e-9);
        let m = build_linear(&DMatrix::zeros(2, 2));
        let l = estimate_flow_lipschitz(&m, 1.0, 2.0, &cfg()).unwrap();
        assert_eq!(l.value, 1.0);
    }

    #[test]
    fn escape_is_an_error() {
        use crate::systems::{DisturbanceSet, FnField};
        let sq = SystemModel::from_field("sq", FnField::new(1, |x, _, o| o[0] = x[0] * x[0]), DisturbanceSet::Trivial);
        assert!(matches!(estimate_flow_lipschitz(&sq, 2.0, 5.0, &cfg()), Err(ConverseError::Escaped(_))));
    }
}
