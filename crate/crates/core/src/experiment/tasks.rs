use super::{f, AlphaSpec, Artifacts, BetaSpec, ConstructTask, ExperimentError, ProbeTask, SeriesChoice, SimulateTask, VerifyTask};
use crate::comparison::{lipschitz_minorant, sontag_factorize, ClassTag, KLSurface, SurfaceKind, TabulatedMonotone};
use crate::converse::{assemble_w, assemble_w_max, ConstructedLyapunov, ConverseConfig, ConverseError};
use crate::lyapunov::{coercivity_profile, verify_decay, CoercivityOptions, LyapunovCandidate};
use crate::models::BuiltModel;
use crate::probes::{classify_fc, classify_rep, classify_rfc, probe_attractivity, Notion, ProbeReport, Witness};
use crate::systems::sampling::{corner_directions, random_signal, sample_rng, subseed, unit_direction};
use crate::systems::{euclid, flow, DisturbanceSet, DisturbanceSignal};
use nalgebra::DVector;

/// Report JSON, its tables as CSV, and one witness file per witness of a
/// refuting verdict, numbered from `next_witness + 1`.
pub(crate) fn report_artifacts(prefix: &str, r: &ProbeReport, art: &mut Artifacts, next_witness: &mut usize) -> Result<(), ExperimentError> {
    art.add_json(format!("{prefix}.json"), r)?;
    for (name, surface) in [("mu", &r.tables.mu), ("beta", &r.tables.beta)] {
        if let Some(s) = surface {
            let mut buf = Vec::new();
            s.write_csv(&mut buf)?;
            art.add(format!("{prefix}_{name}.csv"), buf);
        }
    }
    if !r.tables.delta.is_empty() {
        let rows: Vec<Vec<String>> = r
            .tables
            .delta
            .iter()
            .map(|e| vec![f(e.eps), f(e.h), f(e.magnitude), e.delta.map(f).unwrap_or_default()])
            .collect();
        art.add_csv(format!("{prefix}_delta.csv"), &["eps", "h", "magnitude", "delta"], &rows)?;
    }
    if !r.tables.tau.is_empty() {
        let rows: Vec<Vec<String>> = r
            .tables
            .tau
            .iter()
            .map(|e| vec![f(e.r), f(e.eps), f(e.magnitude), f(e.tau), f(e.tau_half_budget), e.bound.map(f).unwrap_or_default()])
            .collect();
        art.add_csv(format!("{prefix}_tau.csv"), &["r", "eps", "magnitude", "tau", "tau_half_budget", "bound"], &rows)?;
    }
    if !r.tables.levels.is_empty() {
        let rows: Vec<Vec<String>> = r
            .tables
            .levels
            .iter()
            .map(|l| vec![f(l.magnitude), f(l.statistic), l.escaped.to_string()])
            .collect();
        art.add_csv(format!("{prefix}_levels.csv"), &["magnitude", "statistic", "escaped"], &rows)?;
    }
    if r.refuted() {
        for w in &r.witnesses {
            *next_witness += 1;
            art.add_witness(format!("witness_{next_witness}.json"), w)?;
        }
    }
    Ok(())
}

pub(crate) fn simulate(built: &BuiltModel, s: &SimulateTask, art: &mut Artifacts) -> Result<bool, ExperimentError> {
    let model = &built.model;
    let (x0, signal, horizon, expected) = match &s.witness {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Usage(format!("{}: {e}", path.display())))?;
            let w: Witness = serde_json::from_str(&text).map_err(|e| ExperimentError::Usage(format!("{}: {e}", path.display())))?;
            (w.x, w.signal, w.t, Some(w.norm))
        }
        None => (s.x0.clone(), s.signal.clone().unwrap_or_else(|| DisturbanceSignal::constant(0.0)), s.horizon, None),
    };
    if x0.len() != model.dim() {
        return Err(ExperimentError::Usage(format!("x0 has length {}, model dimension is {}", x0.len(), model.dim())));
    }
    let tr = flow(model, horizon, &DVector::from_vec(x0.clone()), &signal, s.step)?;
    let mut buf = Vec::new();
    tr.write_csv(&mut buf)?;
    art.add("trajectory.csv", buf);
    let final_norm = tr.final_state().norm();
    art.line(format!(
        "simulate {}: horizon {}, {} samples, final norm {}, max norm {}",
        model.name,
        horizon,
        tr.times.len(),
        f(final_norm),
        f(tr.max_norm())
    ));
    if let Some(norm) = expected {
        if norm.is_finite() {
            let rel = (final_norm - norm).abs() / norm.abs().max(1e-300);
            art.line(format!("replay: witness norm {}, replayed norm {}, relative difference {}", f(norm), f(final_norm), f(rel)));
        } else {
            art.line(format!("replay: witness reports an escape, replay escaped = {}", tr.escaped.is_some()));
        }
    }
    match tr.escaped {
        Some(b) => {
            art.line(format!("escaped in ({}, {}]", f(b.last_finite), f(b.first_over)));
            art.add_witness(
                "witness_1.json",
                &Witness {
                    x: x0,
                    signal,
                    t: b.first_over,
                    norm: f64::INFINITY,
                    reason: format!("escape in ({}, {}]", b.last_finite, b.first_over),
                },
            )?;
            Ok(true)
        }
        None => Ok(false),
    }
}

pub(crate) fn probe(built: &BuiltModel, p: &ProbeTask, seed: u64, art: &mut Artifacts) -> Result<bool, ExperimentError> {
    let model = &built.model;
    let opts = crate::probes::ProbeOptions { seed, ..p.options.clone() };
    let mut refuted = false;
    let mut next = 0;
    for &notion in &p.notions {
        let report = match notion {
            Notion::RFC => classify_rfc(model, &p.c_grid, &p.tau_grid, &opts)?,
            Notion::REP => classify_rep(model, &p.h_grid, &p.eps_grid, &opts)?,
            Notion::FC => classify_fc(model, p.fc_radius, &opts)?,
            n => probe_attractivity(model, n, &p.r_grid, &p.eps_grid, &opts, built.candidate.as_ref())?,
        };
        refuted |= report.refuted();
        art.line(format!("{} {}", model.name, report.summary_line()));
        report_artifacts(&format!("probe_{notion}"), &report, art, &mut next)?;
    }
    Ok(refuted)
}

fn rate_table(max: f64, g: impl Fn(f64) -> f64) -> Result<TabulatedMonotone, ExperimentError> {
    let grid: Vec<f64> = (0..=2000).map(|i| max * i as f64 / 2000.0).collect();
    Ok(TabulatedMonotone::from_fn(grid, ClassTag::Kinf, g)?)
}

fn test_signals(set: &DisturbanceSet, count: usize, horizon: f64, pieces: usize, seed: u64) -> Vec<DisturbanceSignal> {
    let mut out: Vec<DisturbanceSignal> = set.corners(1.0).into_iter().map(DisturbanceSignal::constant).collect();
    if !matches!(set, DisturbanceSet::Trivial) {
        let stream = subseed(seed, 0x5160);
        out.extend((0..count as u64).map(|i| random_signal(&mut sample_rng(stream, i), set, 1.0, horizon, pieces)));
    }
    out
}

pub(crate) fn verify(built: &BuiltModel, v: &VerifyTask, seed: u64, art: &mut Artifacts) -> Result<bool, ExperimentError> {
    let model = &built.model;
    let cand = built.candidate.clone().unwrap_or_else(LyapunovCandidate::squared_norm);
    let rmax = v.radii.iter().copied().fold(0.0, f64::max);
    let alpha = match v.alpha {
        AlphaSpec::Candidate => cand
            .alpha
            .clone()
            .ok_or_else(|| ExperimentError::Usage(format!("candidate {} has no decay rate; set alpha", cand.name)))?,
        AlphaSpec::Linear { c } => rate_table(2.0 * rmax, |s| c * s)?,
        AlphaSpec::Quadratic { c } => rate_table(2.0 * rmax, |s| c * s * s)?,
    };
    let dim = model.dim();
    let mut dirs = corner_directions(dim);
    dirs.extend(cand.witness_directions.iter().cloned());
    let stream = subseed(seed, 0x7e1);
    dirs.extend((0..v.directions as u64).map(|i| unit_direction(&mut sample_rng(stream, i), dim)));
    let states: Vec<DVector<f64>> = v.radii.iter().flat_map(|&r| dirs.iter().map(move |u| u * r)).collect();
    let signals = test_signals(&model.disturbance_set, v.signals, v.signal_horizon, v.pieces, seed);
    let report = verify_decay(&cand, &alpha, model, &states, &signals, v.tol, &v.dini)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    art.add("decay.csv", buf);
    let mut buf = Vec::new();
    report.write_json(&mut buf)?;
    art.add("decay.json", buf);
    art.line(format!(
        "verify {} on {}: {} ({} samples, worst margin {})",
        cand.name,
        model.name,
        report.verdict.text(),
        report.samples.len(),
        f(report.worst_margin)
    ));
    let mut refuted = false;
    if let Some(w) = report.worst().filter(|_| !report.verdict.passed()) {
        refuted = true;
        art.add_witness(
            "witness_1.json",
            &Witness {
                x: w.x.clone(),
                signal: w.signal.clone(),
                t: v.dini.h0,
                norm: euclid(&w.x),
                reason: format!("Dini derivative {} above -alpha = {}", w.dini, w.bound),
            },
        )?;
    }
    if !v.coercivity_radii.is_empty() {
        let prof = coercivity_profile(
            &cand,
            model,
            &v.coercivity_radii,
            v.coercivity_budget,
            &CoercivityOptions { seed, ..Default::default() },
        )?;
        let rows: Vec<Vec<String>> = prof
            .rows
            .iter()
            .map(|r| {
                let wmin = r.witness_values.iter().copied().fold(f64::INFINITY, f64::min);
                vec![f(r.radius), f(r.inf), f(r.sup), if r.witness_values.is_empty() { String::new() } else { f(wmin) }]
            })
            .collect();
        art.add_csv("coercivity.csv", &["radius", "inf", "sup", "witness_min"], &rows)?;
        art.line(format!("coercivity: non_coercive = {}", prof.non_coercive));
    }
    Ok(refuted)
}

/// (α₁, ρ) from β: Sontag factorization, then the unit-Lipschitz minorant
/// of α₂⁻¹.
pub fn converse_inputs(beta: &KLSurface) -> Result<(TabulatedMonotone, TabulatedMonotone), ExperimentError> {
    let (a1, a2) = sontag_factorize(beta)?;
    let rho = lipschitz_minorant(&a2.inverse_table()?)?;
    Ok((a1, rho))
}

fn exponential_beta(gain: f64, rate: f64, rmax: f64) -> Result<KLSurface, ExperimentError> {
    if !(gain >= 1.0 && rate > 0.0) {
        return Err(ExperimentError::Usage("exponential beta needs gain ≥ 1 and rate > 0".into()));
    }
    let rg: Vec<f64> = (0..=80).map(|i| rmax * i as f64 / 80.0).collect();
    let tg: Vec<f64> = (0..=160).map(|i| i as f64 * 0.125).collect();
    Ok(KLSurface::from_fn(rg, tg, SurfaceKind::KL, |r, t| gain * r * (-rate * t).exp())?)
}

fn escape_witness(e: ConverseError, art: &mut Artifacts) -> Result<bool, ExperimentError> {
    match e {
        ConverseError::Escaped(w) => {
            art.line(format!("construct: premise refuted ({})", w.reason));
            art.add_witness("witness_1.json", &w)?;
            Ok(true)
        }
        e => Err(e.into()),
    }
}

pub(crate) fn construct(built: &BuiltModel, c: &ConstructTask, seed: u64, art: &mut Artifacts) -> Result<bool, ExperimentError> {
    let model = &built.model;
    let rmax = c.eval_radii.iter().copied().fold(4.0 * c.radius, f64::max).max(c.k_max as f64);
    let beta = match &c.beta {
        BetaSpec::Exponential { gain, rate } => exponential_beta(*gain, *rate, rmax)?,
        BetaSpec::Probe { r_grid, options } => {
            let opts = crate::probes::ProbeOptions { seed, ..options.clone() };
            let r = probe_attractivity(model, Notion::UGAS, r_grid, &[0.1], &opts, built.candidate.as_ref())?;
            art.line(format!("{} {}", model.name, r.summary_line()));
            let mut next = 0;
            report_artifacts("probe_UGAS", &r, art, &mut next)?;
            if r.refuted() {
                return Ok(true);
            }
            match (r.consistent(), r.tables.beta) {
                (true, Some(b)) => b,
                _ => return Err(ExperimentError::Premise(format!("UGAS probe was {}", r.verdict))),
            }
        }
    };
    let (alpha1, rho) = converse_inputs(&beta)?;
    let cfg = ConverseConfig {
        k_max: c.k_max,
        radius: c.radius,
        eta: c.eta,
        quadrature_step: c.quadrature_step,
        disturbance_budget: c.disturbance_budget,
        pieces: c.pieces,
        seed,
        ..ConverseConfig::new(rho.clone(), alpha1.clone())
    };
    let assembled = match c.series {
        SeriesChoice::Integral => assemble_w(model, &cfg),
        SeriesChoice::Max => assemble_w_max(model, &cfg),
    };
    let w: ConstructedLyapunov = match assembled {
        Ok(w) => w,
        Err(e) => return escape_witness(e, art),
    };
    for (name, t) in [("alpha1.csv", &alpha1), ("rho.csv", &rho)] {
        let mut buf = Vec::new();
        t.write_csv(&mut buf)?;
        art.add(name, buf);
    }
    let rows: Vec<Vec<String>> = w
        .rows
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                f(r.weight),
                f(r.horizon),
                f(r.lipschitz.empirical),
                r.lipschitz.gronwall.map(f).unwrap_or_default(),
                f(r.lipschitz.value),
                f(r.m),
                f(r.m_diag),
            ]
        })
        .collect();
    art.add_csv(
        "series.csv",
        &["k", "weight", "horizon", "l_empirical", "l_gronwall", "l", "m", "m_diag"],
        &rows,
    )?;
    let dim = model.dim();
    let mut header: Vec<String> = vec!["r".into(), "w".into(), "psi1".into()];
    header.extend((1..=c.k_max).map(|k| format!("v_{k}")));
    let mut rows = Vec::new();
    for &r in &c.eval_radii {
        let mut x = vec![0.0; dim];
        x[0] = r;
        let mut row = vec![f(r)];
        let mut vals = Vec::new();
        for k in 1..=c.k_max {
            match w.vk(k, &x) {
                Ok(v) => vals.push(v),
                Err(e) => return escape_witness(e, art),
            }
        }
        let total: f64 = vals.iter().zip(w.weights()).map(|(v, a)| v * a).sum();
        row.push(f(total));
        row.push(f(w.psi1(r)));
        row.extend(vals.into_iter().map(f));
        rows.push(row);
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    art.add_csv("converse.csv", &header_refs, &rows)?;
    art.line(format!(
        "construct {:?} series on {}: k_max {}, weights sum {}",
        w.kind,
        model.name,
        c.k_max,
        f(w.weights().iter().sum())
    ));
    Ok(false)
}
