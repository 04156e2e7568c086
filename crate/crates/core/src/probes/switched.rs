use super::{ProbeError, ProbeOptions};
use crate::linalg::spectral_norm;
use crate::models::SwitchedLinearModel;
use crate::systems::sampling::{random_signal, sample_rng, subseed};
use crate::systems::{DisturbanceSet, DisturbanceSignal};
use serde::{Deserialize, Serialize};

const TAG_SWITCHED: u64 = 0x5717;
const DWELLS: [f64; 5] = [0.5, 1.0, 1.1, 1.5, 2.0];
const T_POINTS: usize = 41;
const PERIOD_POINTS: usize = 10;

/// Exponential envelope ‖Φ_d(t, 0)‖ ≤ M e^{ωt} fitted on sampled switching
/// signals, with the one-period bound M̃ used for the chain
/// ‖Φ_d(t, 0)‖ ≤ M̃^{k+1}, k = ⌊t/h⌋.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchedBound {
    pub m: f64,
    pub omega: f64,
    pub period: f64,
    pub m_tilde: f64,
    /// Every sample obeys the M̃^{k+1} chain.
    pub submultiplicative_ok: bool,
    /// Signal attaining the largest ‖Φ_d(T, 0)‖.
    pub witness: DisturbanceSignal,
    pub t_grid: Vec<f64>,
    /// max over signals of ‖Φ_d(t, 0)‖ on `t_grid`.
    pub g: Vec<f64>,
}

fn periodic(modes: usize, dwell: f64, start: usize, horizon: f64) -> DisturbanceSignal {
    let n = (horizon / dwell).ceil().max(1.0) as usize;
    let b = (0..n).map(|k| k as f64 * dwell).collect();
    let v = (0..n).map(|k| ((start + k) % modes) as f64).collect();
    DisturbanceSignal::new(b, v).expect("uniform breakpoints")
}

fn signals(modes: usize, horizon: f64, opts: &ProbeOptions) -> Vec<DisturbanceSignal> {
    let mut out: Vec<DisturbanceSignal> = (0..modes).map(|q| DisturbanceSignal::constant(q as f64)).collect();
    if modes > 1 {
        for dwell in DWELLS {
            for start in 0..modes {
                out.push(periodic(modes, dwell, start, horizon));
            }
        }
    }
    let set = DisturbanceSet::Modes { count: modes };
    let stream = subseed(opts.seed, TAG_SWITCHED);
    out.extend((0..opts.budget as u64).map(|i| random_signal(&mut sample_rng(stream, i), &set, 1.0, horizon, opts.pieces)));
    out
}

/// Samples constant, periodic and random switching signals and fits
/// (M, ω) by least squares on log max‖Φ_d(t, 0)‖, then raises M until the
/// envelope covers every grid sample. The period h is min(1, horizon).
pub fn estimate_switched_bound(sw: &SwitchedLinearModel, horizon: f64, opts: &ProbeOptions) -> Result<SwitchedBound, ProbeError> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(ProbeError::InvalidArgument("horizon must be positive".into()));
    }
    let ds = signals(sw.modes().len(), horizon, opts);
    let t_grid: Vec<f64> = (0..T_POINTS).map(|j| horizon * j as f64 / (T_POINTS - 1) as f64).collect();
    let norms: Vec<Vec<f64>> = ds
        .iter()
        .map(|d| t_grid.iter().map(|&t| Ok(spectral_norm(&sw.evolve(d, t, 0.0)?))).collect::<Result<_, ProbeError>>())
        .collect::<Result<_, _>>()?;
    let g: Vec<f64> = (0..T_POINTS).map(|j| norms.iter().map(|n| n[j]).fold(0.0, f64::max)).collect();
    let last = T_POINTS - 1;
    let wi = (0..ds.len()).fold(0, |b, i| if norms[i][last] > norms[b][last] { i } else { b });

    let logs: Vec<f64> = g.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let omega = if logs.windows(2).all(|w| w[0] == w[1]) {
        0.0
    } else {
        let n = T_POINTS as f64;
        let (mt, ml) = (t_grid.iter().sum::<f64>() / n, logs.iter().sum::<f64>() / n);
        let sxy: f64 = t_grid.iter().zip(&logs).map(|(t, l)| (t - mt) * (l - ml)).sum();
        let sxx: f64 = t_grid.iter().map(|t| (t - mt) * (t - mt)).sum();
        sxy / sxx
    };
    let m = t_grid.iter().zip(&g).map(|(t, v)| v * (-omega * t).exp()).fold(1.0, f64::max);

    let period = horizon.min(1.0);
    let periods = (horizon / period).ceil() as usize;
    // τ = 0 contributes ‖I‖ = 1
    let mut m_tilde: f64 = 1.0;
    for d in &ds {
        for j in 0..periods {
            let s = j as f64 * period;
            for k in 1..=PERIOD_POINTS {
                let t = s + period * k as f64 / PERIOD_POINTS as f64;
                m_tilde = m_tilde.max(spectral_norm(&sw.evolve(d, t, s)?));
            }
        }
    }
    let submultiplicative_ok = norms.iter().all(|row| {
        t_grid.iter().zip(row).all(|(t, v)| {
            let k = (t / period).floor() as i32;
            *v <= m_tilde.powi(k + 1) * (1.0 + 1e-9) + 1e-12
        })
    });
    Ok(SwitchedBound {
        m,
        omega,
        period,
        m_tilde,
        submultiplicative_ok,
        witness: ds[wi].clone(),
        t_grid,
        g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{expm_scaled, spectral_abscissa, spectral_radius};
    use crate::models::{build_switched_linear, common_lyapunov_pair, unstable_switching_pair};
    use nalgebra::DMatrix;

    fn opts() -> ProbeOptions {
        ProbeOptions {
            budget: 8,
            ..Default::default()
        }
    }

    #[test]
    fn single_hurwitz_mode() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 3.0, 0.0, -2.0]);
        let sw = build_switched_linear(vec![a.clone()]).unwrap();
        let b = estimate_switched_bound(&sw, 10.0, &opts()).unwrap();
        assert!(b.omega < 0.0);
        // the late-time slope approaches the spectral abscissa
        assert!((b.omega - spectral_abscissa(&a)).abs() < 0.3, "{}", b.omega);
        assert!(b.m >= 1.0 && b.submultiplicative_ok);
        for (t, g) in b.t_grid.iter().zip(&b.g) {
            assert!(*g <= b.m * (b.omega * t).exp() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_mode_is_identity() {
        let sw = build_switched_linear(vec![DMatrix::zeros(2, 2)]).unwrap();
        let b = estimate_switched_bound(&sw, 5.0, &opts()).unwrap();
        assert_eq!(b.omega, 0.0);
        assert!((b.m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unstable_switching_grows_with_periodic_witness() {
        let modes = unstable_switching_pair();
        let sw = build_switched_linear(modes.clone()).unwrap();
        let b = estimate_switched_bound(&sw, 10.0, &opts()).unwrap();
        assert!(b.omega > 0.0, "{}", b.omega);
        assert!(b.submultiplicative_ok);
        assert!(b.witness.breakpoints().len() > 1);
        // some sampled period has a one-period product of spectral radius > 1
        let grows = DWELLS.iter().any(|&p| spectral_radius(&(expm_scaled(&modes[1], p) * expm_scaled(&modes[0], p))) > 1.0);
        assert!(grows);
    }

    #[test]
    fn common_lyapunov_pair_contracts() {
        let sw = build_switched_linear(common_lyapunov_pair()).unwrap();
        let b = estimate_switched_bound(&sw, 10.0, &opts()).unwrap();
        for (t, g) in b.t_grid.iter().zip(&b.g) {
            assert!(*g <= (-0.5 * t).exp() * (1.0 + 1e-9));
        }
        assert!(b.omega < 0.0);
    }
}
