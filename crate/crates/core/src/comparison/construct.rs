use super::table::last_slope;
use super::{ClassTag, ComparisonError, Extrapolation, KLSurface, SurfaceKind, TabulatedMonotone};

/// `G_k(r) = max(r - 1/k, 0)`.
pub fn gk_threshold(k: u32, r: f64) -> Result<f64, ComparisonError> {
    if k == 0 {
        return Err(ComparisonError::InvalidParameter("k must be at least 1".into()));
    }
    if !(r >= 0.0) {
        return Err(ComparisonError::InvalidParameter(format!("r must be nonnegative, got {r}")));
    }
    Ok((r - 1.0 / k as f64).max(0.0))
}

/// Lower unit-Lipschitz envelope `ρ(s) = min_u α(u) + |s - u|` over the grid.
///
/// Two linear sweeps (forward, backward) compute the envelope exactly.
pub fn lipschitz_minorant(alpha: &TabulatedMonotone) -> Result<TabulatedMonotone, ComparisonError> {
    if alpha.class() != ClassTag::Kinf {
        return Err(ComparisonError::InvalidParameter(format!(
            "lipschitz_minorant needs a Kinf table, got {}",
            alpha.class()
        )));
    }
    let g = alpha.grid();
    let mut rho = alpha.values().to_vec();
    for i in 1..rho.len() {
        rho[i] = rho[i].min(rho[i - 1] + (g[i] - g[i - 1]));
    }
    for i in (0..rho.len().saturating_sub(1)).rev() {
        rho[i] = rho[i].min(rho[i + 1] + (g[i + 1] - g[i]));
    }
    rho[0] = 0.0;
    let slope = match alpha.extrapolation() {
        Extrapolation::Linear { slope } => slope.min(1.0),
        Extrapolation::Hold => unreachable!("validated Kinf table"),
    };
    TabulatedMonotone::new(g.to_vec(), rho, ClassTag::Kinf, Extrapolation::Linear { slope })
}

const STRICTNESS: f64 = 1e-9;

/// Fits a K∞ pair with `β(r,t) <= α₂(α₁(r) e^{-t})` at every grid point.
///
/// α₁ starts at `β(·,0)`; α₂ is then the smallest monotone interpolant of
/// the required knots `(α₁(r)e^{-t}, β(r,t))`, and α₁ is tightened against
/// it. A tiny linear term keeps both strictly increasing.
pub fn sontag_factorize(beta: &KLSurface) -> Result<(TabulatedMonotone, TabulatedMonotone), ComparisonError> {
    if beta.kind() != SurfaceKind::KL {
        return Err(ComparisonError::InvalidParameter("sontag_factorize needs a KL surface".into()));
    }
    let (rg, tg) = (beta.r_grid(), beta.t_grid());
    let offset = usize::from(rg[0] > 0.0);
    let mut a1_grid = Vec::with_capacity(rg.len() + offset);
    if offset == 1 {
        a1_grid.push(0.0);
    }
    a1_grid.extend_from_slice(rg);

    let t0_col: Vec<f64> = (0..rg.len()).map(|ir| beta.eval(rg[ir], 0.0)).collect();
    let mut alpha1 = monotone_kinf(&a1_grid, offset, &t0_col)?;
    let mut alpha2 = fit_outer(beta, &alpha1)?;

    for _ in 0..2 {
        let mut req = vec![0.0; rg.len()];
        for (ir, slot) in req.iter_mut().enumerate() {
            for (it, &t) in tg.iter().enumerate() {
                let s = alpha2.inverse(beta.at(ir, it))?;
                *slot = f64::max(*slot, s * t.exp());
            }
        }
        let cand1 = monotone_kinf(&a1_grid, offset, &req)?;
        let cand2 = fit_outer(beta, &cand1)?;
        if worst_violation(beta, &cand1, &cand2).is_none() {
            alpha1 = cand1;
            alpha2 = cand2;
        } else {
            break;
        }
    }

    if let Some((r, t, required, achieved)) = worst_violation(beta, &alpha1, &alpha2) {
        return Err(ComparisonError::Infeasible {
            r,
            t,
            required,
            achieved,
        });
    }
    Ok((alpha1, alpha2))
}

fn monotone_kinf(grid: &[f64], offset: usize, raw: &[f64]) -> Result<TabulatedMonotone, ComparisonError> {
    let mut values = vec![0.0; grid.len()];
    let mut run = 0.0_f64;
    for (i, v) in raw.iter().enumerate() {
        if !v.is_finite() {
            return Err(ComparisonError::InvalidParameter(format!("non-finite surface value {v}")));
        }
        run = run.max(*v);
        let s = grid[i + offset];
        values[i + offset] = if s == 0.0 { 0.0 } else { run + STRICTNESS * s };
    }
    let slope = last_slope(grid, &values).max(STRICTNESS);
    TabulatedMonotone::new(grid.to_vec(), values, ClassTag::Kinf, Extrapolation::Linear { slope })
}

fn fit_outer(beta: &KLSurface, alpha1: &TabulatedMonotone) -> Result<TabulatedMonotone, ComparisonError> {
    let (rg, tg) = (beta.r_grid(), beta.t_grid());
    let mut knots: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    for (ir, &r) in rg.iter().enumerate() {
        let a = alpha1.eval(r);
        for (it, &t) in tg.iter().enumerate() {
            knots.push((a * (-t).exp(), beta.at(ir, it)));
        }
    }
    knots.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut grid: Vec<f64> = Vec::with_capacity(knots.len());
    let mut vals: Vec<f64> = Vec::with_capacity(knots.len());
    for (s, v) in knots {
        match grid.last() {
            Some(&last) if last == s => {
                let lv = vals.last_mut().expect("paired");
                *lv = lv.max(v);
            }
            _ => {
                grid.push(s);
                vals.push(v);
            }
        }
    }
    if grid.len() < 2 {
        return Err(ComparisonError::InvalidParameter("degenerate surface: no positive knots".into()));
    }
    let mut run = 0.0_f64;
    for (s, v) in grid.iter().zip(vals.iter_mut()) {
        run = run.max(*v);
        *v = if *s == 0.0 { 0.0 } else { run + STRICTNESS * s };
    }
    let slope = last_slope(&grid, &vals).max(1.0);
    TabulatedMonotone::new(grid, vals, ClassTag::Kinf, Extrapolation::Linear { slope })
}

fn worst_violation(
    beta: &KLSurface,
    alpha1: &TabulatedMonotone,
    alpha2: &TabulatedMonotone,
) -> Option<(f64, f64, f64, f64)> {
    let mut worst: Option<(f64, f64, f64, f64)> = None;
    let mut gap = 0.0;
    for (ir, &r) in beta.r_grid().iter().enumerate() {
        let a = alpha1.eval(r);
        for (it, &t) in beta.t_grid().iter().enumerate() {
            let req = beta.at(ir, it);
            let got = alpha2.eval(a * (-t).exp());
            if req - got > gap {
                gap = req - got;
                worst = Some((r, t, req, got));
            }
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlFlowOptions {
    pub step: f64,
    pub floor: f64,
}

impl Default for KlFlowOptions {
    fn default() -> Self {
        Self { step: 1e-3, floor: 1e-12 }
    }
}

/// KL surface obtained by integrating `ẏ = -α(y)` from every `y(0) = r`.
pub fn kl_from_alpha(
    alpha: &TabulatedMonotone,
    r_grid: &[f64],
    t_grid: &[f64],
    opts: KlFlowOptions,
) -> Result<KLSurface, ComparisonError> {
    if !matches!(alpha.class(), ClassTag::PositiveDefinite | ClassTag::K | ClassTag::Kinf) {
        return Err(ComparisonError::InvalidParameter(format!(
            "kl_from_alpha needs a positive definite rate, got {}",
            alpha.class()
        )));
    }
    if !(opts.step > 0.0) || !(opts.floor >= 0.0) {
        return Err(ComparisonError::InvalidParameter("step must be positive and floor nonnegative".into()));
    }
    if t_grid.is_empty() || t_grid[0] != 0.0 {
        return Err(ComparisonError::InvalidParameter("t_grid must start at 0".into()));
    }
    let f = |y: f64| -alpha.eval(y.max(0.0));
    let mut values = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        let mut row = Vec::with_capacity(t_grid.len());
        let mut y = r;
        row.push(y);
        for w in t_grid.windows(2) {
            let gap = w[1] - w[0];
            let n = (gap / opts.step).ceil().max(1.0) as usize;
            let h = gap / n as f64;
            for _ in 0..n {
                if y == 0.0 {
                    break;
                }
                let k1 = f(y);
                let k2 = f(y + 0.5 * h * k1);
                let k3 = f(y + 0.5 * h * k2);
                let k4 = f(y + h * k3);
                y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                if !y.is_finite() {
                    return Err(ComparisonError::Integration(format!("non-finite state from r={r}")));
                }
                if y < opts.floor {
                    y = 0.0;
                }
            }
            row.push(y);
        }
        values.push(row);
    }
    KLSurface::new(r_grid.to_vec(), t_grid.to_vec(), values, SurfaceKind::KL)
        .map_err(|e| ComparisonError::Integration(format!("flowed surface lost monotonicity: {e}")))
}

#[cfg(test)]
mod tests {
    use super::super::table::uniform_grid;
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn brute_minorant(g: &[f64], a: &[f64]) -> Vec<f64> {
        g.iter()
            .map(|&s| {
                g.iter()
                    .zip(a)
                    .map(|(&u, &au)| au + (s - u).abs())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn gk_examples() {
        assert_eq!(gk_threshold(1, 0.5).unwrap(), 0.0);
        assert_eq!(gk_threshold(2, 1.0).unwrap(), 0.5);
        assert_eq!(gk_threshold(4, 0.25).unwrap(), 0.0);
        assert!(gk_threshold(0, 1.0).is_err());
    }

    #[test]
    fn minorant_examples_match_brute_force() {
        let g = uniform_grid(2.0, 200);
        let cases: [(fn(f64) -> f64, fn(f64) -> f64); 3] = [
            (|s| s, |s| s),
            (|s| 2.0 * s, |s| s),
            (|s| s * s, |s| if s <= 0.5 { s * s } else { s - 0.25 }),
        ];
        for (alpha, expect) in cases {
            let a = TabulatedMonotone::from_fn(g.clone(), ClassTag::Kinf, alpha).unwrap();
            let rho = lipschitz_minorant(&a).unwrap();
            let brute = brute_minorant(&g, a.values());
            for ((s, r), b) in g.iter().zip(rho.values()).zip(&brute) {
                assert_relative_eq!(*r, *b, epsilon = 1e-12);
                // grid spacing 0.01 makes the tangency exact only at knots near 1/2
                assert!((r - expect(*s)).abs() <= 2.5e-5, "s={s} r={r}");
            }
        }
    }

    #[test]
    fn minorant_rejects_non_kinf() {
        let a = TabulatedMonotone::new(vec![0.0, 1.0], vec![0.0, 1.0], ClassTag::K, Extrapolation::Hold).unwrap();
        assert!(lipschitz_minorant(&a).is_err());
    }

    fn check_domination(beta: &KLSurface, a1: &TabulatedMonotone, a2: &TabulatedMonotone) {
        for (ir, &r) in beta.r_grid().iter().enumerate() {
            for (it, &t) in beta.t_grid().iter().enumerate() {
                let b = beta.at(ir, it);
                assert!(b <= a2.eval(a1.eval(r) * (-t).exp()) + 1e-15 * b, "r={r} t={t}");
            }
        }
    }

    #[test]
    fn factorization_of_already_factored_surfaces() {
        let rg = uniform_grid(5.0, 20);
        let tg = uniform_grid(4.0, 16);
        let b1 = KLSurface::from_fn(rg.clone(), tg.clone(), SurfaceKind::KL, |r, t| r * (-t).exp()).unwrap();
        let id = TabulatedMonotone::identity(5.0, 20);
        let id_wide = TabulatedMonotone::identity(5.0, 1);
        check_domination(&b1, &id, &id_wide);
        let (a1, a2) = sontag_factorize(&b1).unwrap();
        check_domination(&b1, &a1, &a2);

        let b2 = KLSurface::from_fn(rg.clone(), tg.clone(), SurfaceKind::KL, |r, t| 2.0 * r * (-2.0 * t).exp()).unwrap();
        let two = TabulatedMonotone::from_fn(rg.clone(), ClassTag::Kinf, |r| 2.0 * r).unwrap();
        check_domination(&b2, &two, &id_wide);
        let (a1, a2) = sontag_factorize(&b2).unwrap();
        check_domination(&b2, &a1, &a2);
    }

    #[test]
    fn factorization_of_polynomial_decay() {
        let rg = uniform_grid(10.0, 40);
        let tg = uniform_grid(5.0, 25);
        let b = KLSurface::from_fn(rg, tg, SurfaceKind::KL, |r, t| r / (1.0 + t)).unwrap();
        let (a1, a2) = sontag_factorize(&b).unwrap();
        check_domination(&b, &a1, &a2);
        assert_eq!(a1.class(), ClassTag::Kinf);
        assert_eq!(a2.class(), ClassTag::Kinf);
    }

    #[test]
    fn kl_flow_closed_forms() {
        let lin = TabulatedMonotone::identity(2.0, 2);
        let s = kl_from_alpha(&lin, &[0.0, 0.5, 1.0], &[0.0, 0.5, 1.0], KlFlowOptions::default()).unwrap();
        assert_relative_eq!(s.eval(1.0, 1.0), (-1.0f64).exp(), max_relative = 1e-12);
        assert_eq!(s.eval(0.5, 0.0), 0.5);

        let g = uniform_grid(1.0, 4000);
        let sq = TabulatedMonotone::from_fn(g, ClassTag::Kinf, |s| s * s).unwrap();
        let s = kl_from_alpha(&sq, &[0.0, 1.0], &[0.0, 1.0], KlFlowOptions::default()).unwrap();
        // chord interpolation of s² overestimates by at most h²/4
        assert!((s.eval(1.0, 1.0) - 0.5).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn gk_is_unit_lipschitz(k in 1u32..50, a in 0.0f64..10.0, b in 0.0f64..10.0) {
            let d = (gk_threshold(k, a).unwrap() - gk_threshold(k, b).unwrap()).abs();
            // the subtraction of 1/k may round by one ulp on each side
            prop_assert!(d <= (a - b).abs() + 4.0 * f64::EPSILON * a.max(b));
        }

        #[test]
        fn minorant_is_lipschitz_minorant(incs in proptest::collection::vec((0.01f64..1.0, 0.0f64..5.0), 2..40)) {
            let mut g = vec![0.0];
            let mut v = vec![0.0];
            for (dg, dv) in incs {
                g.push(g.last().unwrap() + dg);
                v.push(v.last().unwrap() + dv);
            }
            prop_assume!(*v.last().unwrap() > 0.0);
            let a = TabulatedMonotone::from_fn(g.clone(), ClassTag::Kinf, |s| {
                let i = g.iter().position(|x| *x == s).unwrap();
                v[i]
            }).unwrap();
            let rho = lipschitz_minorant(&a).unwrap();
            for i in 0..g.len() {
                prop_assert!(rho.values()[i] <= v[i]);
                for j in 0..i {
                    let d = (rho.values()[i] - rho.values()[j]).abs();
                    prop_assert!(d <= (g[i] - g[j]) * (1.0 + 1e-12) + 1e-12);
                }
            }
        }

        #[test]
        fn flowed_surface_is_monotone(p in 1.0f64..3.0) {
            let g = uniform_grid(3.0, 60);
            let a = TabulatedMonotone::from_fn(g, ClassTag::Kinf, |s| s.powf(p)).unwrap();
            let s = kl_from_alpha(&a, &uniform_grid(3.0, 6), &uniform_grid(2.0, 8), KlFlowOptions { step: 1e-2, floor: 1e-12 }).unwrap();
            for ir in 1..s.r_grid().len() {
                for it in 0..s.t_grid().len() {
                    prop_assert!(s.at(ir, it) >= s.at(ir - 1, it));
                    if it > 0 { prop_assert!(s.at(ir, it) <= s.at(ir, it - 1)); }
                }
            }
        }
    }
}
