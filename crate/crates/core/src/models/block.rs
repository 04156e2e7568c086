//! Truncated ℓ² block operator A = diag(A_1, …, A_n) with
//! A_i = (−1 + ε) I_i + N_i, N_i the i×i upper shift.

use super::{ModelDescriptor, ModelError};
use crate::linalg::{invert_exact, rational_int, rational_to_f64, solve_triangular_lyapunov_generic, GradedSpectrum};
use crate::lyapunov::LyapunovCandidate;
use crate::systems::{DisturbanceSet, DisturbanceSignal, Dynamics, LinearFlow, SystemError, SystemModel};
use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use num_traits::Zero;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct BlockOperatorModel {
    n_blocks: usize,
    epsilon: f64,
    offsets: Vec<usize>,
    /// Normalized P_i (‖P_i‖₂ = 1) in eigen form.
    lyapunov_blocks: Vec<GradedSpectrum>,
}

impl BlockOperatorModel {
    pub fn new(n: usize, epsilon: f64) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::InvalidParameter("n must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&epsilon) {
            return Err(ModelError::InvalidParameter(format!("epsilon must lie in [0, 0.5), got {epsilon}")));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for i in 1..=n {
            offsets.push(acc);
            acc += i;
        }
        offsets.push(acc);
        let lyapunov_blocks = (1..=n).map(lyapunov_block).collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            n_blocks: n,
            epsilon,
            offsets,
            lyapunov_blocks,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.offsets[self.n_blocks]
    }

    /// State range of block `i` (1-based).
    pub fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i - 1]..self.offsets[i]
    }

    /// A_i as a dense matrix (1-based index).
    pub fn block(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(i, i, |r, c| {
            if r == c {
                -1.0 + self.epsilon
            } else if c == r + 1 {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn lyapunov_block(&self, i: usize) -> &GradedSpectrum {
        &self.lyapunov_blocks[i - 1]
    }

    pub fn p_matrix(&self, i: usize) -> DMatrix<f64> {
        self.lyapunov_blocks[i - 1].to_matrix()
    }

    pub fn lambda_min(&self, i: usize) -> f64 {
        self.lyapunov_blocks[i - 1].min_eigenvalue()
    }

    /// `exp(A_i t)` in closed form: e^{(ε−1)t} Σ_k (N t)^k / k!.
    pub fn block_exp(&self, i: usize, t: f64) -> DMatrix<f64> {
        let c = shift_series(i, t);
        let s = ((self.epsilon - 1.0) * t).exp();
        DMatrix::from_fn(i, i, |r, col| if col >= r { s * c[col - r] } else { 0.0 })
    }

    /// `e^{At} x` blockwise.
    pub fn apply(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for i in 1..=self.n_blocks {
            let rg = self.block_range(i);
            let c = shift_series(i, t);
            let s = ((self.epsilon - 1.0) * t).exp();
            let xb = &x[rg.clone()];
            for r in 0..i {
                let mut acc = 0.0;
                for k in r..i {
                    acc += c[k - r] * xb[k];
                }
                out[rg.start + r] = s * acc;
            }
        }
        out
    }

    /// `V(x) = Σ x_iᵀ P_i x_i`.
    pub fn v(&self, x: &[f64]) -> f64 {
        (1..=self.n_blocks)
            .map(|i| self.lyapunov_blocks[i - 1].quadratic_form(&x[self.block_range(i)]))
            .sum()
    }

    /// Unit state supported on block `i` along the smallest eigenvector of P_i.
    pub fn witness_direction(&self, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        let u = self.lyapunov_blocks[i - 1].min_eigenvector();
        for (k, idx) in self.block_range(i).enumerate() {
            v[idx] = u[k];
        }
        v
    }

    /// Unit state on block `i` maximizing ‖e^{A_i t} x‖ (top right singular vector).
    pub fn growth_direction(&self, i: usize, t: f64) -> (DVector<f64>, f64) {
        let e = self.block_exp(i, t);
        let svd = e.svd(false, true);
        let vt = svd.v_t.expect("requested right singular vectors");
        let (k, smax) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, 0.0), |(bk, bv), (k, v)| if *v > bv { (k, *v) } else { (bk, bv) });
        let mut v = DVector::zeros(self.dim());
        for (j, idx) in self.block_range(i).enumerate() {
            v[idx] = vt[(k, j)];
        }
        (v, smax)
    }

    pub fn to_system(self: &Arc<Self>) -> SystemModel {
        let n = self.n_blocks;
        let eps = self.epsilon;
        SystemModel::new(
            format!("l2-block-n{n}-eps{eps}"),
            Dynamics::Linear(self.clone()),
            DisturbanceSet::Trivial,
        )
        .with_homogeneous(true)
        // ‖A‖₂ ≤ 2 − ε bounds the rhs Lipschitz constant
        .with_lipschitz_hint(move |_, _| 2.0 + eps)
        .with_descriptor(ModelDescriptor::L2Block { n, epsilon: eps })
    }

    pub fn candidate(self: &Arc<Self>) -> LyapunovCandidate {
        let me = self.clone();
        let witnesses = (1..=self.n_blocks).map(|i| self.witness_direction(i)).collect();
        LyapunovCandidate::new(format!("l2-block-v-n{}", self.n_blocks), move |x| me.v(x)).with_witnesses(witnesses)
    }
}

impl LinearFlow for BlockOperatorModel {
    fn dim(&self) -> usize {
        BlockOperatorModel::dim(self)
    }

    fn propagate(
        &self,
        x: &DVector<f64>,
        _d: &DisturbanceSignal,
        t0: f64,
        t1: f64,
    ) -> Result<DVector<f64>, SystemError> {
        Ok(DVector::from_vec(self.apply(t1 - t0, x.as_slice())))
    }
}

/// Coefficients t^k / k! for k < n.
fn shift_series(n: usize, t: f64) -> Vec<f64> {
    let mut c = Vec::with_capacity(n);
    let mut term = 1.0;
    for k in 0..n {
        if k > 0 {
            term *= t / k as f64;
        }
        c.push(term);
    }
    c
}

/// Normalized P solving (A+I/2)ᵀP + P(A+I/2) = −I for the i×i block at ε=0.
///
/// The unnormalized solution is an integer matrix; it and its inverse are
/// computed exactly so both ends of the spectrum keep full relative accuracy.
fn lyapunov_block(i: usize) -> Result<GradedSpectrum, ModelError> {
    let half = BigRational::new((-1).into(), 2.into());
    let t: Vec<Vec<BigRational>> = (0..i)
        .map(|r| {
            (0..i)
                .map(|c| {
                    if r == c {
                        half.clone()
                    } else if c == r + 1 {
                        rational_int(1)
                    } else {
                        BigRational::zero()
                    }
                })
                .collect()
        })
        .collect();
    let q: Vec<Vec<BigRational>> = (0..i)
        .map(|r| (0..i).map(|c| rational_int(i64::from(r == c))).collect())
        .collect();
    let p = solve_triangular_lyapunov_generic(&t, &q).map_err(ModelError::Linalg)?;
    let p_inv = invert_exact(&p).map_err(ModelError::Linalg)?;
    let to_f = |m: &Vec<Vec<BigRational>>| DMatrix::from_fn(i, i, |r, c| rational_to_f64(&m[r][c]));
    let spec = GradedSpectrum::new(&to_f(&p), &to_f(&p_inv)).map_err(ModelError::Linalg)?;
    let lmax = spec.max_eigenvalue();
    Ok(spec.scaled(1.0 / lmax))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{expm_scaled, spectral_norm};
    use approx::assert_relative_eq;

    #[test]
    fn blocks_have_expected_structure() {
        let m = BlockOperatorModel::new(6, 0.0).unwrap();
        assert_eq!(m.dim(), 21);
        let a = m.block(4);
        for r in 0..4 {
            assert_eq!(a[(r, r)], -1.0);
        }
        assert!(spectral_norm(&a) <= 2.0);
    }

    #[test]
    fn closed_form_exponential_matches_pade() {
        let m = BlockOperatorModel::new(8, 0.25).unwrap();
        let e1 = m.block_exp(8, 1.7);
        let e2 = expm_scaled(&m.block(8), 1.7);
        for (a, b) in e1.iter().zip(e2.iter()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn lyapunov_blocks_satisfy_strict_inequality() {
        let m = BlockOperatorModel::new(12, 0.0).unwrap();
        for i in 1..=12 {
            let p = m.p_matrix(i);
            let a = m.block(i);
            assert_relative_eq!(spectral_norm(&p), 1.0, max_relative = 1e-12);
            let s = a.transpose() * &p + &p * &a + &p;
            let eig = s.symmetric_eigen().eigenvalues;
            assert!(eig.iter().all(|v| *v < 0.0), "block {i}: {eig}");
        }
    }

    #[test]
    fn smallest_eigenvalues_match_high_precision_reference() {
        // 80-digit reference values of λ_min(P̂_i)/λ_max(P̂_i)
        let m = BlockOperatorModel::new(40, 0.0).unwrap();
        assert_relative_eq!(m.lambda_min(20), 5.3248784508283626e-12, max_relative = 1e-12);
        assert_relative_eq!(m.lambda_min(30), 6.2395946752101554e-18, max_relative = 1e-12);
        assert_relative_eq!(m.lambda_min(40), 6.886771456073289e-24, max_relative = 1e-12);
    }

    #[test]
    fn witness_direction_realizes_lambda_min() {
        let m = BlockOperatorModel::new(10, 0.0).unwrap();
        let w = m.witness_direction(10);
        assert_relative_eq!(w.norm(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(m.v(w.as_slice()), m.lambda_min(10), max_relative = 1e-10);
    }
}
