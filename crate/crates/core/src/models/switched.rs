use super::{ModelDescriptor, ModelError};
use crate::linalg::{expm_scaled, spectral_norm};
use crate::systems::{DisturbanceSet, DisturbanceSignal, Dynamics, LinearFlow, SystemError, SystemModel};
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;
use std::sync::{Arc, RwLock};

const EXP_CACHE_LIMIT: usize = 4096;

/// Finitely many generators A_q; the disturbance value selects the mode.
#[derive(Debug, Clone)]
pub struct SwitchedLinearModel {
    modes: Vec<DMatrix<f64>>,
    dim: usize,
    /// e^{A_q dt} keyed by (q, dt bits).
    exp_cache: Arc<RwLock<HashMap<(usize, u64), DMatrix<f64>>>>,
}

pub fn build_switched_linear(modes: Vec<DMatrix<f64>>) -> Result<SwitchedLinearModel, ModelError> {
    let dim = modes
        .first()
        .map(|m| m.nrows())
        .ok_or_else(|| ModelError::InvalidParameter("at least one mode required".into()))?;
    for (q, m) in modes.iter().enumerate() {
        if m.nrows() != dim || m.ncols() != dim {
            return Err(ModelError::InvalidParameter(format!(
                "mode {q} is {}x{}, expected {dim}x{dim}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidParameter(format!("mode {q} has non-finite entries")));
        }
    }
    Ok(SwitchedLinearModel {
        modes,
        dim,
        exp_cache: Arc::default(),
    })
}

impl SwitchedLinearModel {
    pub fn modes(&self) -> &[DMatrix<f64>] {
        &self.modes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn mode_index(&self, v: f64) -> Result<usize, SystemError> {
        if v >= 0.0 && v.fract() == 0.0 && (v as usize) < self.modes.len() {
            Ok(v as usize)
        } else {
            Err(SystemError::ModeOutOfRange {
                value: v,
                count: self.modes.len(),
            })
        }
    }

    fn mode(&self, v: f64) -> Result<&DMatrix<f64>, SystemError> {
        Ok(&self.modes[self.mode_index(v)?])
    }

    fn mode_exp(&self, q: usize, dt: f64) -> DMatrix<f64> {
        let key = (q, dt.to_bits());
        if let Some(e) = self.exp_cache.read().expect("cache lock").get(&key) {
            return e.clone();
        }
        let e = expm_scaled(&self.modes[q], dt);
        let mut cache = self.exp_cache.write().expect("cache lock");
        if cache.len() >= EXP_CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(key, e.clone());
        e
    }

    /// Φ_d(t, s): ordered product of mode exponentials over the pieces of d
    /// meeting [s, t], later factors on the left.
    pub fn evolve(&self, d: &DisturbanceSignal, t: f64, s: f64) -> Result<DMatrix<f64>, SystemError> {
        if !(t >= s) {
            return Err(SystemError::InvalidArgument(format!("evolve needs t >= s, got t={t}, s={s}")));
        }
        let mut phi = DMatrix::identity(self.dim, self.dim);
        let mut a = s;
        let mut cuts: Vec<f64> = d.breakpoints_in(s, t).collect();
        cuts.push(t);
        for b in cuts {
            let m = self.mode(d.value_at(a))?;
            if b > a {
                phi = expm_scaled(m, b - a) * phi;
            }
            a = b;
        }
        Ok(phi)
    }

    pub fn max_mode_norm(&self) -> f64 {
        self.modes.iter().map(spectral_norm).fold(0.0, f64::max)
    }

    pub fn to_system(self: &Arc<Self>) -> SystemModel {
        let lip = self.max_mode_norm();
        let rows = self
            .modes
            .iter()
            .map(|m| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
            .collect();
        SystemModel::new(
            format!("switched-{}x{}", self.modes.len(), self.dim),
            Dynamics::Linear(self.clone()),
            DisturbanceSet::Modes {
                count: self.modes.len(),
            },
        )
        .with_homogeneous(true)
        .with_lipschitz_hint(move |_, _| lip)
        .with_descriptor(ModelDescriptor::Switched { modes: rows })
    }
}

impl LinearFlow for SwitchedLinearModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn propagate(
        &self,
        x: &DVector<f64>,
        d: &DisturbanceSignal,
        t0: f64,
        t1: f64,
    ) -> Result<DVector<f64>, SystemError> {
        let mut y = x.clone();
        let mut a = t0;
        let mut cuts: Vec<f64> = d.breakpoints_in(t0, t1).collect();
        cuts.push(t1);
        for b in cuts {
            let q = self.mode_index(d.value_at(a))?;
            if b > a {
                y = self.mode_exp(q, b - a) * y;
            }
            a = b;
        }
        Ok(y)
    }
}

/// Pair of Hurwitz modes whose periodic switching is unstable.
pub fn unstable_switching_pair() -> Vec<DMatrix<f64>> {
    vec![
        DMatrix::from_row_slice(2, 2, &[-0.1, 1.0, -2.0, -0.1]),
        DMatrix::from_row_slice(2, 2, &[-0.1, 2.0, -1.0, -0.1]),
    ]
}

/// Pair of Hurwitz modes sharing the Lyapunov function ‖x‖²: for both,
/// A + Aᵀ ≼ −I, so ‖Φ_d(t, 0)‖ ≤ e^{−t/2} for every switching signal.
pub fn common_lyapunov_pair() -> Vec<DMatrix<f64>> {
    vec![
        DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, -1.0, -1.0]),
        DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, -0.5]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_radius;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn single_mode_and_empty_product() {
        let m = build_switched_linear(vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])]).unwrap();
        let d = DisturbanceSignal::constant(0.0);
        let phi = m.evolve(&d, 1.3, 0.0).unwrap();
        let e = expm_scaled(&m.modes()[0], 1.3);
        assert_relative_eq!(phi, e, epsilon = 1e-15);
        assert_eq!(m.evolve(&d, 0.7, 0.7).unwrap(), DMatrix::identity(2, 2));
    }

    #[test]
    fn one_switch_product_order() {
        let modes = unstable_switching_pair();
        let m = build_switched_linear(modes.clone()).unwrap();
        let d = DisturbanceSignal::new(vec![0.0, 0.6], vec![0.0, 1.0]).unwrap();
        let phi = m.evolve(&d, 1.5, 0.0).unwrap();
        let oracle = expm_scaled(&modes[1], 0.9) * expm_scaled(&modes[0], 0.6);
        for (a, b) in phi.iter().zip(oracle.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-14);
        }
    }

    #[test]
    fn rejects_bad_modes() {
        let m = build_switched_linear(common_lyapunov_pair()).unwrap();
        assert!(m.evolve(&DisturbanceSignal::constant(2.0), 1.0, 0.0).is_err());
        assert!(m.evolve(&DisturbanceSignal::constant(0.5), 1.0, 0.0).is_err());
        assert!(build_switched_linear(vec![DMatrix::zeros(2, 2), DMatrix::zeros(3, 3)]).is_err());
    }

    #[test]
    fn periodic_product_of_unstable_pair_expands() {
        let modes = unstable_switching_pair();
        let period = expm_scaled(&modes[1], 1.1) * expm_scaled(&modes[0], 1.1);
        assert!(spectral_radius(&period) > 1.5);
        for a in &modes {
            assert!(crate::linalg::spectral_abscissa(a) < 0.0);
        }
    }

    proptest! {
        #[test]
        fn evolution_is_a_cocycle(cuts in proptest::collection::vec((0.05f64..0.7, 0usize..2), 1..6), r in 0.0f64..1.0) {
            let m = build_switched_linear(unstable_switching_pair()).unwrap();
            let mut t = 0.0;
            let mut pieces = Vec::new();
            for (dt, q) in cuts { pieces.push((t, q as f64)); t += dt; }
            let d = DisturbanceSignal::from_pieces(&pieces).unwrap();
            let mid = r * t;
            let whole = m.evolve(&d, t, 0.0).unwrap();
            let split = m.evolve(&d, t, mid).unwrap() * m.evolve(&d, mid, 0.0).unwrap();
            for (a, b) in whole.iter().zip(split.iter()) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
        }
    }
}
