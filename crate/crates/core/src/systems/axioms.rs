use super::sampling::{in_ball, random_signal, sample_rng, subseed};
use super::{flow_final, DisturbanceSignal, SystemError, SystemModel};
use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxiomOptions {
    pub step: f64,
    /// Initial states are drawn from this ball.
    pub radius: f64,
    /// Upper bound for both sampled times t and h.
    pub t_max: f64,
    /// Sweep magnitude used when D is unbounded.
    pub magnitude: f64,
    pub pieces: usize,
    pub seed: u64,
}

impl Default for AxiomOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            radius: 2.0,
            t_max: 2.0,
            magnitude: 1.0,
            pieces: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub samples: usize,
    pub escaped_excluded: usize,
    pub identity_max: f64,
    pub causality_max: f64,
    pub cocycle_max: f64,
    /// Final-state change when the step is halved.
    pub continuity_max: f64,
    pub tol: f64,
}

impl AxiomReport {
    pub fn identity_ok(&self) -> bool {
        self.identity_max == 0.0
    }
    pub fn causality_ok(&self) -> bool {
        self.causality_max == 0.0
    }
    pub fn cocycle_ok(&self) -> bool {
        self.cocycle_max <= self.tol
    }
    pub fn continuity_ok(&self) -> bool {
        self.continuity_max <= self.tol
    }
    pub fn all_ok(&self) -> bool {
        self.identity_ok() && self.causality_ok() && self.cocycle_ok() && self.continuity_ok()
    }
}

struct AxiomSample {
    identity: f64,
    causality: f64,
    cocycle: f64,
    continuity: f64,
}

fn dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    super::euclid((a - b).as_slice())
}

fn one_axiom_sample(model: &SystemModel, i: u64, opts: &AxiomOptions) -> Result<Option<AxiomSample>, SystemError> {
    let mut rng = sample_rng(subseed(opts.seed, 0xA1), i);
    let x = in_ball(&mut rng, model.dim(), opts.radius);
    let t: f64 = rng.random_range(0.0..opts.t_max);
    let h: f64 = rng.random_range(0.0..opts.t_max);
    let horizon = t + h;
    let set = &model.disturbance_set;
    let d = random_signal(&mut rng, set, opts.magnitude, horizon, opts.pieces);
    let other = random_signal(&mut rng, set, opts.magnitude, horizon, opts.pieces);

    let (x0, e0) = flow_final(model, 0.0, &x, &d, opts.step)?;
    if e0.is_some() {
        return Ok(None);
    }
    let identity = dist(&x0, &x);

    let (xt, e1) = flow_final(model, t, &x, &d, opts.step)?;
    let d2 = DisturbanceSignal::concat(&d, &other, t);
    let (xt2, e2) = flow_final(model, t, &x, &d2, opts.step)?;
    let (lhs, e3) = flow_final(model, h, &xt, &d.shift(t), opts.step)?;
    let (rhs, e4) = flow_final(model, horizon, &x, &d, opts.step)?;
    let (fine, e5) = flow_final(model, horizon, &x, &d, opts.step / 2.0)?;
    if [e1, e2, e3, e4, e5].iter().any(Option::is_some) {
        return Ok(None);
    }
    Ok(Some(AxiomSample {
        identity,
        causality: dist(&xt, &xt2),
        cocycle: dist(&lhs, &rhs),
        continuity: dist(&rhs, &fine),
    }))
}

/// Sampled residuals of the identity, causality, cocycle and continuity
/// axioms. Escaping samples are excluded and counted.
pub fn check_axioms(
    model: &SystemModel,
    sample_budget: usize,
    tol: f64,
    opts: &AxiomOptions,
) -> Result<AxiomReport, SystemError> {
    if sample_budget == 0 {
        return Err(SystemError::InvalidArgument("sample_budget must be at least 1".into()));
    }
    let results: Vec<Option<AxiomSample>> = (0..sample_budget as u64)
        .into_par_iter()
        .map(|i| one_axiom_sample(model, i, opts))
        .collect::<Result<_, _>>()?;
    let mut rep = AxiomReport {
        samples: sample_budget,
        escaped_excluded: 0,
        identity_max: 0.0,
        causality_max: 0.0,
        cocycle_max: 0.0,
        continuity_max: 0.0,
        tol,
    };
    for r in results {
        match r {
            None => rep.escaped_excluded += 1,
            Some(s) => {
                rep.identity_max = rep.identity_max.max(s.identity);
                rep.causality_max = rep.causality_max.max(s.causality);
                rep.cocycle_max = rep.cocycle_max.max(s.cocycle);
                rep.continuity_max = rep.continuity_max.max(s.continuity);
            }
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityWitness {
    pub lambda: f64,
    pub x: Vec<f64>,
    pub t: f64,
    pub signal: DisturbanceSignal,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityReport {
    pub samples: usize,
    pub escaped_excluded: usize,
    pub max_residual: f64,
    pub tol: f64,
    pub holds: bool,
    pub worst: Option<HomogeneityWitness>,
}

/// Samples `‖φ(t, λx, d) − λφ(t, x, d)‖` for λ ∈ [0, lambda_max]. The first
/// two samples use λ = lambda_max and λ = 0.
pub fn check_homogeneity(
    model: &SystemModel,
    sample_budget: usize,
    tol: f64,
    lambda_max: f64,
    opts: &AxiomOptions,
) -> Result<HomogeneityReport, SystemError> {
    if sample_budget == 0 {
        return Err(SystemError::InvalidArgument("sample_budget must be at least 1".into()));
    }
    let results: Vec<Option<HomogeneityWitness>> = (0..sample_budget as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(subseed(opts.seed, 0xB2), i);
            let lambda = match i {
                0 => lambda_max,
                1 => 0.0,
                _ => rng.random_range(0.0..=lambda_max),
            };
            let x = in_ball(&mut rng, model.dim(), opts.radius);
            let t: f64 = rng.random_range(0.0..opts.t_max);
            let d = random_signal(&mut rng, &model.disturbance_set, opts.magnitude, t, opts.pieces);
            let (a, ea) = flow_final(model, t, &(&x * lambda), &d, opts.step)?;
            let (b, eb) = flow_final(model, t, &x, &d, opts.step)?;
            if ea.is_some() || eb.is_some() {
                return Ok(None);
            }
            Ok(Some(HomogeneityWitness {
                lambda,
                residual: dist(&a, &(b * lambda)),
                x: x.as_slice().to_vec(),
                t,
                signal: d,
            }))
        })
        .collect::<Result<_, SystemError>>()?;
    let mut escaped = 0;
    let mut worst: Option<HomogeneityWitness> = None;
    for r in results {
        match r {
            None => escaped += 1,
            Some(w) => {
                if worst.as_ref().is_none_or(|cur| w.residual > cur.residual) {
                    worst = Some(w);
                }
            }
        }
    }
    let max_residual = worst.as_ref().map_or(0.0, |w| w.residual);
    Ok(HomogeneityReport {
        samples: sample_budget,
        escaped_excluded: escaped,
        max_residual,
        tol,
        holds: max_residual <= tol,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{DisturbanceSet, FnField};

    fn linear() -> SystemModel {
        SystemModel::from_field(
            "lin",
            FnField::new(2, |x, d, o| {
                o[0] = -x[0] + d * x[1];
                o[1] = -x[0] - 0.5 * x[1];
            }),
            DisturbanceSet::Interval { lo: -1.0, hi: 1.0 },
        )
    }

    #[test]
    fn linear_model_satisfies_axioms() {
        let rep = check_axioms(&linear(), 16, 1e-6, &AxiomOptions::default()).unwrap();
        assert!(rep.all_ok(), "{rep:?}");
        assert_eq!(rep.escaped_excluded, 0);
    }

    #[test]
    fn cocycle_residual_is_fourth_order() {
        let m = linear();
        let coarse = AxiomOptions { step: 0.1, ..Default::default() };
        let fine = AxiomOptions { step: 0.05, ..Default::default() };
        let a = check_axioms(&m, 8, 1.0, &coarse).unwrap();
        let b = check_axioms(&m, 8, 1.0, &fine).unwrap();
        assert!(a.cocycle_max > 0.0);
        assert!(a.cocycle_max / b.cocycle_max >= 8.0, "{} vs {}", a.cocycle_max, b.cocycle_max);
    }

    #[test]
    fn homogeneity_holds_for_linear_and_fails_for_cubic() {
        let rep = check_homogeneity(&linear(), 16, 1e-8, 2.0, &AxiomOptions::default()).unwrap();
        assert!(rep.holds, "{rep:?}");
        let cubic = SystemModel::from_field(
            "cubic",
            FnField::new(1, |x, d, o| o[0] = d.abs() * (x[0] - x[0].powi(3))),
            DisturbanceSet::Real,
        );
        let rep = check_homogeneity(&cubic, 8, 1e-8, 2.0, &AxiomOptions::default()).unwrap();
        assert!(!rep.holds);
        assert!(rep.max_residual > 1e-3);
    }
}
