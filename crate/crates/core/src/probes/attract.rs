use super::delta::delta_probe;
use super::sample::{levels, sample_pairs, step_for, validate_grid, validate_opts, Pair};
use super::{
    still_moving, sustained_growth, LevelSummary, Notion, ProbeError, ProbeOptions, ProbeReport, ProbeTables,
    ProbeVerdict, TauEntry, Witness,
};
use crate::comparison::{KLSurface, SurfaceKind};
use crate::lyapunov::LyapunovCandidate;
use crate::systems::{euclid, run_observed, SystemModel};
use rayon::prelude::*;
use std::ops::ControlFlow;

const TAG_ATTRACT: u64 = 0xa77;
const T_POINTS: usize = 21;
/// Relative change of τ between budgets (or sweep levels) accepted as stable.
const TAU_STABLE: f64 = 0.05;

/// Statistics of one trajectory on [0, T].
struct Run {
    /// sup ‖φ‖ on [t_j, T] for every checkpoint t_j.
    tail_sup: Vec<f64>,
    /// Last sample time with ‖φ‖ > ε, per ε (`∞` when still outside at T).
    last_above: Vec<f64>,
    /// First sample time with ‖φ‖ ≤ ε, per ε.
    first_below: Vec<Option<f64>>,
    initial: f64,
    last: f64,
    escape: Option<f64>,
}

fn run_stats(
    model: &SystemModel,
    x: &nalgebra::DVector<f64>,
    p: &Pair,
    checkpoints: &[f64],
    eps_grid: &[f64],
    step: f64,
) -> Result<Run, ProbeError> {
    let horizon = *checkpoints.last().expect("non-empty");
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let end = run_observed(model, horizon, x, &p.d, step, checkpoints, &mut |t, s| {
        samples.push((t, euclid(s)));
        ControlFlow::Continue(())
    })?;
    let escape = end.escaped.map(|b| b.first_over);
    let initial = samples[0].1;
    let last = if escape.is_some() { f64::INFINITY } else { samples.last().expect("t = 0 observed").1 };
    let mut tail_sup = vec![f64::INFINITY; checkpoints.len()];
    if escape.is_none() {
        let mut acc = f64::NEG_INFINITY;
        let mut j = checkpoints.len();
        for &(t, n) in samples.iter().rev() {
            acc = acc.max(n);
            while j > 0 && checkpoints[j - 1] >= t {
                j -= 1;
                tail_sup[j] = acc;
            }
        }
    }
    let last_above = eps_grid
        .iter()
        .map(|&e| {
            if last > e {
                f64::INFINITY
            } else {
                samples.iter().rev().find(|(_, n)| *n > e).map_or(0.0, |(t, _)| *t)
            }
        })
        .collect();
    let first_below = eps_grid
        .iter()
        .map(|&e| samples.iter().find(|(_, n)| *n <= e).map(|(t, _)| *t))
        .collect();
    Ok(Run {
        tail_sup,
        last_above,
        first_below,
        initial,
        last,
        escape,
    })
}

/// Runs of every pair from every radius, in (pair, radius) order.
fn level_runs(
    model: &SystemModel,
    r_grid: &[f64],
    eps_grid: &[f64],
    checkpoints: &[f64],
    m: f64,
    opts: &ProbeOptions,
) -> Result<(Vec<Pair>, Vec<Vec<Run>>), ProbeError> {
    let pairs = sample_pairs(model, opts, m, opts.horizon, TAG_ATTRACT)?;
    let r_max = *r_grid.last().expect("validated");
    let step = step_for(model, opts, 2.0 * r_max.max(1.0), m);
    let runs = pairs
        .par_iter()
        .map(|p| {
            r_grid
                .iter()
                .map(|&r| run_stats(model, &(&p.x * r), p, checkpoints, eps_grid, step))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((pairs, runs))
}

fn checkpoints(horizon: f64) -> Vec<f64> {
    (0..T_POINTS).map(|j| horizon * j as f64 / (T_POINTS - 1) as f64).collect()
}

fn escape_witness(pairs: &[Pair], runs: &[Vec<Run>], r_grid: &[f64], m: f64) -> Option<Witness> {
    pairs.iter().zip(runs).find_map(|(p, rs)| {
        rs.iter().zip(r_grid).find_map(|(run, &r)| {
            run.escape.map(|t| p.witness(r, t, f64::INFINITY, format!("escape by t = {t} at magnitude {m}")))
        })
    })
}

/// A sample ending no closer to 0 than it started.
fn non_decaying(pairs: &[Pair], runs: &[Vec<Run>], r_grid: &[f64], horizon: f64) -> Option<Witness> {
    pairs.iter().zip(runs).find_map(|(p, rs)| {
        rs.iter().zip(r_grid).find_map(|(run, &r)| {
            (run.initial > 0.0 && run.last >= run.initial).then(|| {
                p.witness(r, horizon, run.last, format!("‖φ(T)‖ = {:e} ≥ ‖x‖ = {:e} at T = {horizon}", run.last, run.initial))
            })
        })
    })
}

/// Sampled probe of the attractivity and stability notions: US, UGAS, UAS,
/// UGATT and (uniform) weak attractivity. `r_grid` holds initial radii and
/// `eps_grid` target radii; the candidate, when it supplies ψ₂ and α,
/// bounds uniform weak attraction times by (ψ₂(r) + 1)/α(ε).
pub fn probe_attractivity(
    model: &SystemModel,
    notion: Notion,
    r_grid: &[f64],
    eps_grid: &[f64],
    opts: &ProbeOptions,
    candidate: Option<&LyapunovCandidate>,
) -> Result<ProbeReport, ProbeError> {
    validate_opts(opts)?;
    validate_grid("r grid", r_grid, true)?;
    validate_grid("ε grid", eps_grid, false)?;
    match notion {
        Notion::US => delta_probe(model, Notion::US, &[opts.horizon], eps_grid, opts),
        Notion::UGAS => ugas(model, r_grid, opts),
        Notion::UGATT | Notion::WeakAttractive | Notion::UniformWeakAttractive => {
            attraction_times(model, notion, r_grid, eps_grid, opts, candidate)
        }
        Notion::UAS => {
            let us = delta_probe(model, Notion::US, &[opts.horizon], eps_grid, opts)?;
            let att = attraction_times(model, Notion::UGATT, r_grid, eps_grid, opts, candidate)?;
            let verdict = match (us.verdict, att.verdict) {
                (ProbeVerdict::Refuted, _) | (_, ProbeVerdict::Refuted) => ProbeVerdict::Refuted,
                (ProbeVerdict::Consistent, ProbeVerdict::Consistent) => ProbeVerdict::Consistent,
                _ => ProbeVerdict::Inconclusive,
            };
            let mut notes = vec![format!("stability part: {}", us.verdict), format!("attraction part: {}", att.verdict)];
            notes.extend(us.notes);
            notes.extend(att.notes);
            Ok(ProbeReport {
                notion,
                verdict,
                witnesses: us.witnesses.into_iter().chain(att.witnesses).collect(),
                tables: ProbeTables {
                    delta: us.tables.delta,
                    tau: att.tables.tau,
                    levels: att.tables.levels,
                    ..Default::default()
                },
                notes,
            })
        }
        Notion::RFC | Notion::REP | Notion::FC => Err(ProbeError::InvalidArgument(format!(
            "{notion} is not an attractivity notion; use its classifier"
        ))),
    }
}

fn ugas(model: &SystemModel, r_grid: &[f64], opts: &ProbeOptions) -> Result<ProbeReport, ProbeError> {
    let cps = checkpoints(opts.horizon);
    let nt = cps.len();
    let mut beta = vec![vec![0.0_f64; nt]; r_grid.len()];
    let mut history: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut summaries = Vec::new();
    let mut witnesses = Vec::new();
    let mut notes = Vec::new();
    let mut verdict = ProbeVerdict::Consistent;
    for m in levels(model, opts) {
        let (pairs, runs) = level_runs(model, r_grid, &[], &cps, m, opts)?;
        if let Some(w) = escape_witness(&pairs, &runs, r_grid, m) {
            witnesses.push(w);
            verdict = ProbeVerdict::Refuted;
        } else if let Some(w) = non_decaying(&pairs, &runs, r_grid, opts.horizon) {
            witnesses.push(w);
            verdict = ProbeVerdict::Refuted;
        }
        for rs in &runs {
            for (ir, run) in rs.iter().enumerate() {
                for it in 0..nt {
                    beta[ir][it] = beta[ir][it].max(run.tail_sup[it]);
                }
            }
        }
        for ir in 1..r_grid.len() {
            for it in 0..nt {
                beta[ir][it] = beta[ir][it].max(beta[ir - 1][it]);
            }
        }
        history.push(beta.clone());
        summaries.push(LevelSummary {
            magnitude: m,
            statistic: beta.last().map_or(0.0, |row| row[0]),
            escaped: verdict == ProbeVerdict::Refuted && witnesses.last().is_some_and(|w| w.norm.is_infinite()),
        });
        if verdict == ProbeVerdict::Refuted {
            break;
        }
        if let Some((ir, it)) = super::mu::growing_cell(&history, |s| sustained_growth(s)) {
            let (pairs_ref, runs_ref) = (&pairs, &runs);
            let best = pairs_ref
                .iter()
                .zip(runs_ref)
                .max_by(|a, b| a.1[ir].tail_sup[it].total_cmp(&b.1[ir].tail_sup[it]))
                .expect("pairs non-empty");
            witnesses.push(best.0.witness(
                r_grid[ir],
                cps[it],
                best.1[ir].tail_sup[it],
                format!("overshoot bound β̃({}, {}) grows without bound along the magnitude sweep", r_grid[ir], cps[it]),
            ));
            verdict = ProbeVerdict::Refuted;
            break;
        }
    }
    let mut tables = ProbeTables {
        levels: summaries,
        ..Default::default()
    };
    if verdict == ProbeVerdict::Consistent {
        let decayed = r_grid
            .iter()
            .zip(&beta)
            .all(|(r, row)| *r == 0.0 || row[nt - 1] <= row[0] / 10.0);
        if !decayed {
            verdict = ProbeVerdict::Inconclusive;
            notes.push(format!("β̃(r, {}) has not dropped below β̃(r, 0)/10", opts.horizon));
        } else if super::mu::growing_cell(&history, |s| still_moving(s, 0.01)).is_some() {
            verdict = ProbeVerdict::Inconclusive;
            notes.push("β̃ still grows at the largest sweep level".into());
        }
        let fitted = beta.iter().map(|row| row.iter().map(|v| v * (1.0 + opts.fit_tol)).collect()).collect();
        tables.beta = Some(KLSurface::new(r_grid.to_vec(), cps, fitted, SurfaceKind::KL)?);
    }
    Ok(ProbeReport {
        notion: Notion::UGAS,
        verdict,
        witnesses,
        tables,
        notes,
    })
}

fn rel_change(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn attraction_times(
    model: &SystemModel,
    notion: Notion,
    r_grid: &[f64],
    eps_grid: &[f64],
    opts: &ProbeOptions,
    candidate: Option<&LyapunovCandidate>,
) -> Result<ProbeReport, ProbeError> {
    let cps = [0.0, opts.horizon];
    let weak = notion != Notion::UGATT;
    let half = opts.budget / 2;
    let ne = eps_grid.len();
    let cells: Vec<(usize, usize)> = (0..r_grid.len()).flat_map(|ir| (0..ne).map(move |ie| (ir, ie))).collect();
    let mut tau = vec![0.0_f64; cells.len()];
    let mut tau_half = vec![0.0_f64; cells.len()];
    let mut history: Vec<Vec<f64>> = vec![Vec::new(); cells.len()];
    let mut table = Vec::new();
    let mut summaries = Vec::new();
    let mut witnesses = Vec::new();
    let mut notes = Vec::new();
    let mut verdict = ProbeVerdict::Consistent;
    let bound = |r: f64, e: f64| -> Option<f64> {
        let c = candidate?;
        let (psi2, alpha) = (c.psi2.as_ref()?, c.alpha.as_ref()?);
        let a = alpha.eval(e);
        (a > 0.0).then(|| (psi2.eval(r) + 1.0) / a)
    };
    'levels: for m in levels(model, opts) {
        let (pairs, runs) = level_runs(model, r_grid, eps_grid, &cps, m, opts)?;
        if let Some(w) = escape_witness(&pairs, &runs, r_grid, m) {
            witnesses.push(w);
            verdict = ProbeVerdict::Refuted;
            summaries.push(LevelSummary {
                magnitude: m,
                statistic: f64::INFINITY,
                escaped: true,
            });
            break;
        }
        let mut unreached: Option<Witness> = None;
        for (k, &(ir, ie)) in cells.iter().enumerate() {
            let mut arg: Option<(usize, f64)> = None;
            for (pi, (p, rs)) in pairs.iter().zip(&runs).enumerate() {
                // radii up to r_grid[ir]
                for run in &rs[..=ir] {
                    let t = if weak {
                        run.first_below[ie].unwrap_or(f64::INFINITY)
                    } else {
                        run.last_above[ie]
                    };
                    if arg.is_none_or(|(_, best)| t > best) {
                        arg = Some((pi, t));
                    }
                    if p.rank <= half {
                        tau_half[k] = tau_half[k].max(t);
                    }
                    tau[k] = tau[k].max(t);
                }
            }
            let (pi, t) = arg.expect("pairs non-empty");
            let b = bound(r_grid[ir], eps_grid[ie]).filter(|_| notion == Notion::UniformWeakAttractive);
            table.push(TauEntry {
                r: r_grid[ir],
                eps: eps_grid[ie],
                magnitude: m,
                tau: tau[k],
                tau_half_budget: tau_half[k],
                bound: b,
            });
            if t.is_infinite() && unreached.is_none() {
                let rs = &runs[pi];
                let j = rs[..=ir].iter().position(|r| r.last > eps_grid[ie]).unwrap_or(ir);
                let run = &rs[j];
                let mut w = pairs[pi].witness(
                    r_grid[j],
                    opts.horizon,
                    run.last,
                    format!("‖φ(T)‖ = {:e} > ε = {} at T = {}", run.last, eps_grid[ie], opts.horizon),
                );
                if run.initial > 0.0 && run.last >= run.initial {
                    w.reason = format!("{}; no decay from ‖x‖ = {:e}", w.reason, run.initial);
                    witnesses.push(w);
                    verdict = ProbeVerdict::Refuted;
                    break 'levels;
                }
                unreached = Some(w);
            }
            if let (Some(b), true) = (b, t.is_finite()) {
                if t > b {
                    let mut w = pairs[pi].witness(r_grid[ir], t, eps_grid[ie], String::new());
                    w.reason = format!("hitting time {t} exceeds the candidate bound {b}");
                    witnesses.push(w);
                    verdict = ProbeVerdict::Refuted;
                    break 'levels;
                }
            }
            if tau[k].is_finite() {
                history[k].push(tau[k]);
            }
        }
        summaries.push(LevelSummary {
            magnitude: m,
            statistic: tau.iter().copied().fold(0.0, f64::max),
            escaped: false,
        });
        if let Some(w) = unreached {
            notes.push(format!("not reached within the horizon: {}", w.reason));
            verdict = ProbeVerdict::Inconclusive;
            if notion == Notion::WeakAttractive {
                witnesses.push(w);
            }
            break;
        }
        if notion != Notion::WeakAttractive {
            if let Some(k) = history.iter().position(|s| sustained_growth(s)) {
                let (ir, ie) = cells[k];
                notes.push(format!(
                    "τ({}, {}) grows by ≥ 1.5× at each of the last sweep levels",
                    r_grid[ir], eps_grid[ie]
                ));
                verdict = ProbeVerdict::Refuted;
                break;
            }
        }
    }
    if verdict == ProbeVerdict::Consistent && notion != Notion::WeakAttractive {
        if (0..cells.len()).any(|k| rel_change(tau[k], tau_half[k]) > TAU_STABLE) {
            verdict = ProbeVerdict::Inconclusive;
            notes.push(format!("τ moved by more than 5% between budget {half} and {}", opts.budget));
        } else if history.iter().any(|s| still_moving(s, TAU_STABLE)) {
            verdict = ProbeVerdict::Inconclusive;
            notes.push("τ still moves by more than 5% at the largest sweep level".into());
        }
    }
    Ok(ProbeReport {
        notion,
        verdict,
        witnesses,
        tables: ProbeTables {
            tau: table,
            levels: summaries,
            ..Default::default()
        },
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_linear, build_scalar_example, build_ugatt_example, BlockOperatorModel, ScalarVariant};
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn opts() -> ProbeOptions {
        ProbeOptions {
            budget: 6,
            ..Default::default()
        }
    }

    #[test]
    fn linear_decay_is_ugas_with_exponential_beta() {
        let m = build_linear(&DMatrix::from_element(1, 1, -1.0));
        let r = probe_attractivity(&m, Notion::UGAS, &[0.0, 0.5, 1.0, 2.0], &[0.1], &opts(), None).unwrap();
        assert!(r.consistent(), "{}", r.summary_line());
        let beta = r.tables.beta.unwrap();
        for (ir, rv) in beta.r_grid().iter().enumerate() {
            for (it, t) in beta.t_grid().iter().enumerate() {
                let exact = rv * (-t).exp();
                let b = beta.at(ir, it);
                assert!(b >= exact && b <= exact * (1.0 + 2e-3) + 1e-12, "{rv} {t} {b} {exact}");
            }
        }
    }

    #[test]
    fn unbounded_and_growing_models_are_not_ugas() {
        let r = probe_attractivity(&build_scalar_example(ScalarVariant::Ii), Notion::UGAS, &[0.0, 1.0], &[0.1], &opts(), None)
            .unwrap();
        assert!(r.refuted());
        let b = Arc::new(BlockOperatorModel::new(10, 0.25).unwrap());
        let (dir, _) = b.growth_direction(10, 10.0);
        let o = ProbeOptions {
            extra_directions: vec![dir.as_slice().to_vec()],
            ..opts()
        };
        let r = probe_attractivity(&b.to_system(), Notion::UGAS, &[0.0, 1.0], &[0.1], &o, None).unwrap();
        assert!(r.refuted(), "{}", r.summary_line());
    }

    #[test]
    fn ugatt_example_attracts_but_is_not_ugas() {
        let m = build_ugatt_example();
        let o = ProbeOptions {
            budget: 4,
            sweep: vec![1.0, 4.0, 16.0, 64.0],
            horizon: 6.0,
            ..Default::default()
        };
        let r = probe_attractivity(&m, Notion::UGATT, &[0.5, 1.0], &[0.1], &o, None).unwrap();
        assert!(!r.refuted(), "{}", r.summary_line());
        let tau = r.tables.tau.iter().filter(|e| e.r == 1.0).map(|e| e.tau).fold(0.0, f64::max);
        // y reaches 0 by 1.30, then x from its peak in at most 1.67 more
        assert!(tau.is_finite() && tau < 1.30 + 1.67, "{tau}");
        let r = probe_attractivity(&m, Notion::UGAS, &[0.0, 1.0], &[0.1], &o, None).unwrap();
        assert!(!r.consistent(), "{}", r.summary_line());
    }

    #[test]
    fn weak_attraction_and_scalar_i() {
        // ẋ = |d|(x − x³): d = 0 freezes every state
        let m = build_scalar_example(ScalarVariant::I);
        let r = probe_attractivity(&m, Notion::WeakAttractive, &[0.5], &[0.1], &opts(), None).unwrap();
        assert!(!r.consistent());
        assert!(!r.witnesses.is_empty());
        let lin = build_linear(&DMatrix::from_element(1, 1, -1.0));
        let r = probe_attractivity(&lin, Notion::UniformWeakAttractive, &[1.0, 2.0], &[0.1], &opts(), None).unwrap();
        assert!(r.consistent(), "{}", r.summary_line());
        let t = r.tables.tau.iter().find(|e| e.r == 2.0).unwrap().tau;
        assert!((t - 20f64.ln()).abs() < 0.02, "{t}");
    }

    #[test]
    fn stability_probes() {
        let lin = build_linear(&DMatrix::from_element(1, 1, -1.0));
        assert!(probe_attractivity(&lin, Notion::US, &[1.0], &[0.1], &opts(), None).unwrap().consistent());
        assert!(probe_attractivity(&lin, Notion::UAS, &[0.5], &[0.1], &opts(), None).unwrap().consistent());
        assert!(probe_attractivity(&lin, Notion::RFC, &[1.0], &[0.1], &opts(), None).is_err());
    }
}
