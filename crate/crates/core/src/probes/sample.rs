use super::{ProbeError, ProbeOptions, Witness};
use crate::systems::sampling::{corner_directions, in_ball, random_signal, sample_rng, subseed};
use crate::systems::{euclid, run_observed, DisturbanceSignal, EscapeBracket, SystemModel};
use nalgebra::DVector;
use std::ops::ControlFlow;

/// Initial direction (in the closed unit ball) and disturbance.
#[derive(Debug, Clone)]
pub(crate) struct Pair {
    pub x: DVector<f64>,
    pub d: DisturbanceSignal,
    /// Largest random-sample index involved, plus one (0 for fully
    /// deterministic pairs). Pairs with `rank <= b` form the budget-`b` set.
    pub rank: usize,
}

impl Pair {
    pub fn witness(&self, scale: f64, t: f64, norm: f64, reason: impl Into<String>) -> Witness {
        Witness {
            x: (&self.x * scale).as_slice().to_vec(),
            signal: self.d.clone(),
            t,
            norm,
            reason: reason.into(),
        }
    }
}

/// Sweep magnitudes: the configured sweep for unbounded D, a single level
/// otherwise.
pub(crate) fn levels(model: &SystemModel, opts: &ProbeOptions) -> Vec<f64> {
    if model.disturbance_set.is_bounded() || opts.sweep.is_empty() {
        vec![1.0]
    } else {
        opts.sweep.clone()
    }
}

pub(crate) fn step_for(model: &SystemModel, opts: &ProbeOptions, radius: f64, magnitude: f64) -> f64 {
    let m = model.disturbance_set.magnitude_bound(magnitude);
    match &model.lipschitz_hint {
        Some(h) => {
            let l = h(radius, m);
            if l > 0.0 && l.is_finite() {
                opts.base_step.min(opts.safety / l)
            } else {
                opts.base_step
            }
        }
        None => opts.base_step,
    }
}

pub(crate) fn validate_opts(opts: &ProbeOptions) -> Result<(), ProbeError> {
    if opts.budget == 0 {
        return Err(ProbeError::InvalidArgument("budget must be at least 1".into()));
    }
    if !(opts.base_step > 0.0) || !(opts.safety > 0.0) || !(opts.horizon > 0.0) {
        return Err(ProbeError::InvalidArgument("step, safety and horizon must be positive".into()));
    }
    if opts.sweep.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
        return Err(ProbeError::InvalidArgument("sweep magnitudes must be positive".into()));
    }
    Ok(())
}

pub(crate) fn validate_grid(name: &str, g: &[f64], allow_zero: bool) -> Result<(), ProbeError> {
    let lo_ok = |v: f64| if allow_zero { v >= 0.0 } else { v > 0.0 };
    if g.is_empty() || g.iter().any(|v| !lo_ok(*v) || !v.is_finite()) || g.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ProbeError::InvalidArgument(format!(
            "{name} must be non-empty, strictly increasing and {}",
            if allow_zero { "nonnegative" } else { "positive" }
        )));
    }
    Ok(())
}

/// Deterministic directions (signed axes and diagonals for small dimension,
/// plus the configured extras), then `budget` random points of the unit
/// ball. Signals: constant corners of D, then `budget` random signals.
/// Pairs: deterministic × all signals, and random state i with the corners
/// and random signal i.
pub(crate) fn sample_pairs(
    model: &SystemModel,
    opts: &ProbeOptions,
    magnitude: f64,
    horizon: f64,
    tag: u64,
) -> Result<Vec<Pair>, ProbeError> {
    let dim = model.dim();
    let mut det: Vec<DVector<f64>> = if dim <= 8 {
        corner_directions(dim)
    } else {
        corner_directions(dim).into_iter().take(2).collect()
    };
    for e in &opts.extra_directions {
        if e.len() != dim {
            return Err(ProbeError::InvalidArgument(format!(
                "extra direction has length {}, model dimension is {dim}",
                e.len()
            )));
        }
        let v = DVector::from_column_slice(e);
        let n = v.norm();
        if n > 0.0 {
            det.push(v / n);
        }
    }
    let set = &model.disturbance_set;
    let corners: Vec<DisturbanceSignal> = set.corners(magnitude).into_iter().map(DisturbanceSignal::constant).collect();
    let stream = subseed(opts.seed, tag ^ magnitude.to_bits().rotate_left(17));
    let random: Vec<(DVector<f64>, DisturbanceSignal)> = (0..opts.budget as u64)
        .map(|i| {
            let mut rng = sample_rng(stream, i);
            let d = random_signal(&mut rng, set, magnitude, horizon, opts.pieces);
            let x = in_ball(&mut rng, dim, 1.0);
            (x, d)
        })
        .collect();
    let mut pairs = Vec::new();
    for x in &det {
        for d in &corners {
            pairs.push(Pair {
                x: x.clone(),
                d: d.clone(),
                rank: 0,
            });
        }
        for (j, (_, d)) in random.iter().enumerate() {
            pairs.push(Pair {
                x: x.clone(),
                d: d.clone(),
                rank: j + 1,
            });
        }
    }
    for (i, (x, d)) in random.iter().enumerate() {
        for c in &corners {
            pairs.push(Pair {
                x: x.clone(),
                d: c.clone(),
                rank: i + 1,
            });
        }
        pairs.push(Pair {
            x: x.clone(),
            d: d.clone(),
            rank: i + 1,
        });
    }
    Ok(pairs)
}

/// Per-checkpoint running sup of ‖φ‖ and its time; entries from the
/// escape on are `+∞`.
pub(crate) struct Reach {
    pub sups: Vec<f64>,
    pub times: Vec<f64>,
    pub escape: Option<EscapeBracket>,
}

pub(crate) fn reach(
    model: &SystemModel,
    x: &DVector<f64>,
    d: &DisturbanceSignal,
    checkpoints: &[f64],
    step: f64,
) -> Result<Reach, ProbeError> {
    let horizon = checkpoints.last().copied().unwrap_or(0.0);
    let mut sups = Vec::with_capacity(checkpoints.len());
    let mut times = Vec::with_capacity(checkpoints.len());
    let (mut best, mut best_t) = (f64::NEG_INFINITY, 0.0);
    let end = run_observed(model, horizon, x, d, step, checkpoints, &mut |t, s| {
        let n = euclid(s);
        if n > best {
            best = n;
            best_t = t;
        }
        while sups.len() < checkpoints.len() && checkpoints[sups.len()] == t {
            sups.push(best);
            times.push(best_t);
        }
        ControlFlow::Continue(())
    })?;
    if let Some(b) = end.escaped {
        while sups.len() < checkpoints.len() {
            sups.push(f64::INFINITY);
            times.push(b.first_over);
        }
    }
    Ok(Reach {
        sups,
        times,
        escape: end.escaped,
    })
}
