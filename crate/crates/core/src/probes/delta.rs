use super::sample::{levels, sample_pairs, step_for, validate_grid, validate_opts, Pair};
use super::{
    still_moving, sustained_growth, DeltaEntry, LevelSummary, Notion, ProbeError, ProbeOptions, ProbeReport,
    ProbeTables, ProbeVerdict, Witness,
};
use crate::systems::{euclid, run_observed, SystemModel};
use rayon::prelude::*;
use std::ops::ControlFlow;

const TAG_DELTA: u64 = 0xde17a;
const BISECTIONS: usize = 20;

/// First sample (in pair order) leaving the ε-ball before `h` from radius δ.
fn first_exit(
    model: &SystemModel,
    pairs: &[Pair],
    delta: f64,
    eps: f64,
    h: f64,
    step: f64,
) -> Result<Option<Witness>, ProbeError> {
    let hits: Vec<Option<(f64, f64)>> = pairs
        .par_iter()
        .map(|p| {
            let mut hit = None;
            let end = run_observed(model, h, &(&p.x * delta), &p.d, step, &[], &mut |t, s| {
                let n = euclid(s);
                if n > eps {
                    hit = Some((t, n));
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            })?;
            Ok(hit.or(end.escaped.map(|b| (b.first_over, f64::INFINITY))))
        })
        .collect::<Result<_, ProbeError>>()?;
    Ok(pairs.iter().zip(hits).find_map(|(p, h)| {
        h.map(|(t, n)| p.witness(delta, t, n, format!("‖φ‖ = {n:e} > ε = {eps} from ‖x‖ ≤ {delta:e}")))
    }))
}

/// Largest δ ≤ ε (by bisection) such that no sample from the δ-ball leaves
/// the ε-ball on [0, h]. `None` plus the last failing sample when every
/// tested δ fails.
fn search_delta(
    model: &SystemModel,
    pairs: &[Pair],
    eps: f64,
    h: f64,
    step: f64,
) -> Result<(Option<f64>, Option<Witness>), ProbeError> {
    let Some(mut fail) = first_exit(model, pairs, eps, eps, h, step)? else {
        return Ok((Some(eps), None));
    };
    let (mut lo, mut hi) = (0.0, eps);
    for _ in 0..BISECTIONS {
        let mid = 0.5 * (lo + hi);
        match first_exit(model, pairs, mid, eps, h, step)? {
            None => lo = mid,
            Some(w) => {
                hi = mid;
                fail = w;
            }
        }
    }
    Ok(if lo > 0.0 { (Some(lo), None) } else { (None, Some(fail)) })
}

pub(crate) fn delta_probe(
    model: &SystemModel,
    notion: Notion,
    h_grid: &[f64],
    eps_grid: &[f64],
    opts: &ProbeOptions,
) -> Result<ProbeReport, ProbeError> {
    validate_opts(opts)?;
    validate_grid("h grid", h_grid, false)?;
    validate_grid("ε grid", eps_grid, false)?;
    if !model.equilibrium_at_zero {
        return Err(ProbeError::NotEquilibrium);
    }
    let h_max = *h_grid.last().expect("validated");
    let eps_max = *eps_grid.last().expect("validated");
    let cells: Vec<(f64, f64)> = eps_grid.iter().flat_map(|&e| h_grid.iter().map(move |&h| (e, h))).collect();
    let mut current: Vec<f64> = vec![f64::INFINITY; cells.len()];
    let mut history: Vec<Vec<f64>> = vec![Vec::new(); cells.len()];
    let mut table = Vec::new();
    let mut summaries = Vec::new();
    let mut witnesses = Vec::new();
    let mut verdict = ProbeVerdict::Consistent;
    let mut notes = Vec::new();
    'levels: for m in levels(model, opts) {
        let pairs = sample_pairs(model, opts, m, h_max, TAG_DELTA)?;
        let step = step_for(model, opts, 2.0 * eps_max.max(1.0), m);
        for (k, &(eps, h)) in cells.iter().enumerate() {
            let (found, fail) = search_delta(model, &pairs, eps, h, step)?;
            table.push(DeltaEntry {
                eps,
                h,
                magnitude: m,
                delta: found,
            });
            match found {
                Some(d) => {
                    current[k] = current[k].min(d);
                    history[k].push(1.0 / current[k]);
                }
                None => {
                    let mut w = fail.expect("failing sample recorded");
                    w.reason = format!(
                        "no δ ≥ {:e} keeps ‖φ‖ ≤ {eps} on [0, {h}] at magnitude {m}: {}",
                        eps * 0.5f64.powi(BISECTIONS as i32),
                        w.reason
                    );
                    witnesses.push(w);
                    verdict = ProbeVerdict::Refuted;
                }
            }
        }
        summaries.push(LevelSummary {
            magnitude: m,
            statistic: current.iter().copied().fold(f64::INFINITY, f64::min),
            escaped: false,
        });
        if verdict == ProbeVerdict::Refuted {
            break;
        }
        for (k, seq) in history.iter().enumerate() {
            if sustained_growth(seq) {
                let (eps, h) = cells[k];
                let probe = current[k] * 4.0;
                let w = first_exit(model, &pairs, probe.min(eps), eps, h, step)?;
                let reason = format!("δ(ε = {eps}, h = {h}) shrinks by ≥ 1.5× at each of the last sweep levels");
                if let Some(mut w) = w {
                    w.reason = format!("{reason}: {}", w.reason);
                    witnesses.push(w);
                } else {
                    notes.push(reason);
                }
                verdict = ProbeVerdict::Refuted;
                break 'levels;
            }
        }
    }
    if verdict == ProbeVerdict::Consistent && history.iter().any(|s| still_moving(s, 0.01)) {
        verdict = ProbeVerdict::Inconclusive;
        notes.push("δ still shrinks at the largest sweep level".into());
    }
    Ok(ProbeReport {
        notion,
        verdict,
        witnesses,
        tables: ProbeTables {
            delta: table,
            levels: summaries,
            ..Default::default()
        },
        notes,
    })
}

/// Robust equilibrium point: for every ε and h a δ with μ̃(δ, h) ≤ ε
/// uniformly over the disturbance sweep.
pub fn classify_rep(model: &SystemModel, h_grid: &[f64], eps_grid: &[f64], opts: &ProbeOptions) -> Result<ProbeReport, ProbeError> {
    delta_probe(model, Notion::REP, h_grid, eps_grid, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_linear, build_scalar_example, ScalarVariant};
    use crate::systems::{flow, DisturbanceSet, FnField};
    use nalgebra::{DMatrix, DVector};

    fn opts() -> ProbeOptions {
        ProbeOptions {
            budget: 4,
            ..Default::default()
        }
    }

    #[test]
    fn rep_classification_of_scalar_examples() {
        let (h, e) = ([0.5, 1.0], [0.1, 0.5]);
        let r = classify_rep(&build_scalar_example(ScalarVariant::Iv), &h, &e, &opts()).unwrap();
        assert!(r.consistent(), "{}", r.summary_line());
        // worst case d = 0 gives δ = ε e^{-h}
        let d = r.tables.delta.iter().find(|d| d.eps == 0.1 && d.h == 1.0).unwrap().delta.unwrap();
        assert!((d - 0.1 * (-1f64).exp()).abs() < 1e-6, "{d}");
        for v in [ScalarVariant::I, ScalarVariant::Ii] {
            let m = build_scalar_example(v);
            let r = classify_rep(&m, &h, &e, &opts()).unwrap();
            assert!(r.refuted(), "{v:?}");
            let w = &r.witnesses[0];
            let tr = flow(&m, w.t, &DVector::from_vec(w.x.clone()), &w.signal, 1e-4).unwrap();
            assert!(tr.max_norm() > 0.1 - 1e-9, "{v:?} replay {}", tr.max_norm());
        }
        assert!(classify_rep(&build_scalar_example(ScalarVariant::Iii), &h, &e, &opts()).unwrap().consistent());
    }

    #[test]
    fn linear_decay_keeps_delta_equal_eps() {
        let m = build_linear(&DMatrix::from_element(1, 1, -1.0));
        let r = classify_rep(&m, &[1.0], &[0.2], &opts()).unwrap();
        assert!(r.consistent());
        assert_eq!(r.tables.delta[0].delta, Some(0.2));
    }

    #[test]
    fn requires_equilibrium() {
        let m = SystemModel::from_field("shift", FnField::new(1, |_, _, o| o[0] = 1.0), DisturbanceSet::Trivial)
            .with_equilibrium(false);
        assert_eq!(
            classify_rep(&m, &[1.0], &[0.1], &opts()).unwrap_err(),
            ProbeError::NotEquilibrium
        );
        assert!(classify_rep(&build_linear(&DMatrix::from_element(1, 1, -1.0)), &[0.0], &[0.1], &opts()).is_err());
    }
}
