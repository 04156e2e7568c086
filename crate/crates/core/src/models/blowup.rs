//! Planar system with a bounded, non-coercive Lyapunov function whose
//! solutions escape in finite time from the half-plane z₁ ≤ −1.
//!
//! Pinned choices: δ = tanh, ε₁ = 2·tanh, ε₂ = ½·tanh, ψ(x) = x for x ≥ 0
//! and eˣ − 1 below, ρ = (2/π)·arctan, η a C^∞ step equal to 1 on
//! (−∞, −c−1] and 0 on [−c, ∞).

use super::{ModelDescriptor, ModelError};
use crate::comparison::{ClassTag, Extrapolation, TabulatedMonotone};
use crate::lyapunov::LyapunovCandidate;
use crate::systems::{DisturbanceSet, FnField, SystemModel};
use std::f64::consts::FRAC_2_PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlowupParams {
    pub c: f64,
}

impl BlowupParams {
    pub fn new(c: f64) -> Result<Self, ModelError> {
        // ε₁(−c) < −1 and δ(−c) < −sup|ε₂| = −½ both reduce to tanh(c) > ½
        if !(c > 0.0) || !c.is_finite() || 2.0 * (-c).tanh() >= -1.0 || (-c).tanh() >= -0.5 {
            return Err(ModelError::InvalidParameter(format!(
                "c = {c} violates ε₁(−c) < −1 or δ(−c) < −sup|ε₂|"
            )));
        }
        Ok(Self { c })
    }

    /// V along the unscaled field F.
    pub fn vdot_unscaled(&self, z: &[f64]) -> f64 {
        let (z1, z2) = (z[0], z[1]);
        let th2 = z2.tanh();
        if z1 <= -1.0 {
            return FRAC_2_PI / (1.0 + z2 * z2) * (-1.0 - 0.5 * th2);
        }
        let (x1, th1, _) = chart(z1);
        let xd1 = -2.0 * th1 - th2;
        let xd2 = th1 - 0.5 * th2;
        let v1 = ln_cosh(x1) + ln_cosh(z2);
        let rho_p = FRAC_2_PI / (1.0 + v1 * v1);
        let t1 = rho_p * (th1 * xd1 + th2 * xd2);
        let t2 = self.eta_prime(x1) * xd1 * (1.0 + FRAC_2_PI * z2.atan());
        let t3 = self.eta(x1) * FRAC_2_PI / (1.0 + z2 * z2) * xd2;
        t1 + t2 + t3
    }

    /// Unscaled field F in z-coordinates.
    pub fn field_unscaled(&self, z: &[f64], out: &mut [f64]) {
        let (z1, z2) = (z[0], z[1]);
        let th2 = z2.tanh();
        if z1 <= -1.0 {
            out[0] = 0.0;
            out[1] = -1.0 - 0.5 * th2;
            return;
        }
        let (_, th1, dpsi) = chart(z1);
        out[0] = dpsi * (-2.0 * th1 - th2);
        out[1] = th1 - 0.5 * th2;
    }

    /// Time rescaling `h(z) = max{1, χ(‖z‖)‖z‖ / |V̇(z)|}`, χ(r) the smooth
    /// step from 0 at r = 1 to 1 at r = 2.
    pub fn h(&self, z: &[f64]) -> f64 {
        let r = z[0].hypot(z[1]);
        let chi = smooth_step(r - 1.0);
        if chi == 0.0 {
            return 1.0;
        }
        let vd = self.vdot_unscaled(z).abs();
        (chi * r / vd).max(1.0)
    }

    pub fn v(&self, z: &[f64]) -> f64 {
        let (z1, z2) = (z[0], z[1]);
        if z1 <= -1.0 {
            return 2.0 + FRAC_2_PI * z2.atan();
        }
        let (x1, _, _) = chart(z1);
        let v1 = ln_cosh(x1) + ln_cosh(z2);
        FRAC_2_PI * v1.atan() + self.eta(x1) * (1.0 + FRAC_2_PI * z2.atan())
    }

    fn eta(&self, x1: f64) -> f64 {
        smooth_step(-self.c - x1)
    }

    fn eta_prime(&self, x1: f64) -> f64 {
        -smooth_step_prime(-self.c - x1)
    }
}

/// `(x₁, tanh x₁, ψ'(x₁))` for z₁ > −1, with x₁ = ψ⁻¹(z₁).
fn chart(z1: f64) -> (f64, f64, f64) {
    if z1 >= 0.0 {
        (z1, z1.tanh(), 1.0)
    } else {
        let u = 1.0 + z1;
        let u2 = u * u;
        (z1.ln_1p(), (u2 - 1.0) / (u2 + 1.0), u)
    }
}

fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn bump(u: f64) -> f64 {
    if u > 0.0 {
        (-1.0 / u).exp()
    } else {
        0.0
    }
}

fn smooth_step(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let (a, b) = (bump(u), bump(1.0 - u));
    a / (a + b)
}

fn smooth_step_prime(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        return 0.0;
    }
    let (a, b) = (bump(u), bump(1.0 - u));
    let (da, db) = (a / (u * u), -b / ((1.0 - u) * (1.0 - u)));
    (da * (a + b) - a * (da + db)) / ((a + b) * (a + b))
}

/// Upper sandwich `ψ₂(r) = min(3, (400/π) r²) + r`.
pub fn blowup_psi2(r: f64) -> f64 {
    (400.0 / std::f64::consts::PI * r * r).min(3.0) + r
}

/// The rescaled field F₂ = h·F with its non-coercive Lyapunov function V.
pub fn build_blowup_example(c: f64) -> Result<(SystemModel, LyapunovCandidate), ModelError> {
    let p = BlowupParams::new(c)?;
    let field = FnField::new(2, move |z, _, out| {
        p.field_unscaled(z, out);
        let h = p.h(z);
        out[0] *= h;
        out[1] *= h;
    });
    let model = SystemModel::from_field("blowup", field, DisturbanceSet::Trivial)
        .with_descriptor(ModelDescriptor::Blowup { c });

    let grid: Vec<f64> = (0..=400).map(|i| i as f64 * 0.125).collect();
    let psi2 = TabulatedMonotone::from_fn(grid.clone(), ClassTag::Kinf, blowup_psi2)?;
    let alpha = TabulatedMonotone::new(grid.clone(), grid, ClassTag::Kinf, Extrapolation::Linear { slope: 1.0 })?;
    let cand = LyapunovCandidate::new("blowup-v", move |z| p.v(z))
        .with_psi2(psi2)
        .with_alpha(alpha)
        .with_derivative(move |z, _| p.h(z) * p.vdot_unscaled(z));
    Ok((model, cand))
}
