//! Dense linear-algebra helpers: matrix exponentials, continuous-time
//! Lyapunov solves, exact rational inversion and an eigen-decomposition for
//! severely graded positive definite matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, One, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not upper triangular (entry ({row},{col}) = {value})")]
    NotTriangular { row: usize, col: usize, value: f64 },
    #[error("Lyapunov operator is singular: T[{i}][{i}] + T[{j}][{j}] = 0")]
    SingularLyapunov { i: usize, j: usize },
    #[error("matrix is singular")]
    Singular,
}

fn ensure_square(a: &DMatrix<f64>) -> Result<usize, LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(a.nrows())
}

/// Matrix exponential `exp(a * t)`.
///
/// Backed by nalgebra's scaling-and-squaring Padé implementation.
pub fn expm_scaled(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    if t == 0.0 || a.iter().all(|v| *v == 0.0) {
        return DMatrix::identity(a.nrows(), a.ncols());
    }
    (a * t).exp()
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |m, v| m.max(*v))
}

/// Spectral radius of a general square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |m, z| m.max(z.norm()))
}

/// Spectral abscissa (largest real part of the spectrum).
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |m, z| m.max(z.re))
}

/// Solves `tᵀ p + p t = -q` for upper-triangular `t` by forward
/// substitution, over any exact or floating field.
///
/// Entry (i, j) only depends on entries (k, j), k < i, and (i, k), k < j,
/// so a row-major sweep visits every dependency first.
pub fn solve_triangular_lyapunov_generic<F>(t: &[Vec<F>], q: &[Vec<F>]) -> Result<Vec<Vec<F>>, LinalgError>
where
    F: Num + Clone,
{
    let n = t.len();
    if q.len() != n || t.iter().chain(q.iter()).any(|row| row.len() != n) {
        return Err(LinalgError::Dimension(format!(
            "triangular Lyapunov solve expects {n}x{n} operands"
        )));
    }
    let mut p: Vec<Vec<F>> = vec![vec![F::zero(); n]; n];
    for i in 0..n {
        for j in 0..n {
            let diag = t[i][i].clone() + t[j][j].clone();
            if diag.is_zero() {
                return Err(LinalgError::SingularLyapunov { i, j });
            }
            let mut rhs = F::zero() - q[i][j].clone();
            for k in 0..i {
                if !t[k][i].is_zero() {
                    rhs = rhs - t[k][i].clone() * p[k][j].clone();
                }
            }
            for k in 0..j {
                if !t[k][j].is_zero() {
                    rhs = rhs - p[i][k].clone() * t[k][j].clone();
                }
            }
            p[i][j] = rhs / diag;
        }
    }
    Ok(p)
}

/// Floating-point front end of [`solve_triangular_lyapunov_generic`].
pub fn solve_triangular_lyapunov(t: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let n = ensure_square(t)?;
    if q.shape() != (n, n) {
        return Err(LinalgError::Dimension("q must match t".into()));
    }
    for i in 0..n {
        for j in 0..i {
            if t[(i, j)] != 0.0 {
                return Err(LinalgError::NotTriangular {
                    row: i,
                    col: j,
                    value: t[(i, j)],
                });
            }
        }
    }
    let to_rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect()
    };
    let p = solve_triangular_lyapunov_generic(&to_rows(t), &to_rows(q))?;
    Ok(DMatrix::from_fn(n, n, |i, j| p[i][j]))
}

/// Solves `aᵀ p + p a = -q` through the Kronecker-vectorized linear system.
/// Cost is O(n⁶); intended for small matrices and as a cross-check.
pub fn solve_lyapunov_kronecker(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let n = ensure_square(a)?;
    if q.shape() != (n, n) {
        return Err(LinalgError::Dimension("q must match a".into()));
    }
    // column-major vec: vec(aᵀ p) = (I ⊗ aᵀ) vec(p), vec(p a) = (aᵀ ⊗ I) vec(p)
    let nn = n * n;
    let mut big = DMatrix::<f64>::zeros(nn, nn);
    for col in 0..n {
        for row in 0..n {
            let r = col * n + row;
            for k in 0..n {
                big[(r, col * n + k)] += a[(k, row)];
                big[(r, k * n + row)] += a[(k, col)];
            }
        }
    }
    let rhs = DVector::from_iterator(nn, q.iter().map(|v| -v));
    let sol = big.lu().solve(&rhs).ok_or(LinalgError::Singular)?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

/// Exact Gauss–Jordan inverse over the rationals.
pub fn invert_exact(m: &[Vec<BigRational>]) -> Result<Vec<Vec<BigRational>>, LinalgError> {
    let n = m.len();
    if m.iter().any(|row| row.len() != n) {
        return Err(LinalgError::Dimension("exact inverse needs a square matrix".into()));
    }
    let mut a: Vec<Vec<BigRational>> = m.to_vec();
    let mut inv: Vec<Vec<BigRational>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { BigRational::one() } else { BigRational::zero() })
                .collect()
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !a[r][col].is_zero()).ok_or(LinalgError::Singular)?;
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col].clone();
        for j in 0..n {
            a[col][j] = a[col][j].clone() / p.clone();
            inv[col][j] = inv[col][j].clone() / p.clone();
        }
        for r in 0..n {
            if r == col || a[r][col].is_zero() {
                continue;
            }
            let f = a[r][col].clone();
            for j in 0..n {
                let da = f.clone() * a[col][j].clone();
                a[r][j] = a[r][j].clone() - da;
                let di = f.clone() * inv[col][j].clone();
                inv[r][j] = inv[r][j].clone() - di;
            }
        }
    }
    Ok(inv)
}

pub fn rational_from_f64_exact(v: f64) -> Option<BigRational> {
    BigRational::from_float(v)
}

pub fn rational_to_f64(v: &BigRational) -> f64 {
    // ToPrimitive on BigRational rounds correctly for in-range values
    v.to_f64().unwrap_or_else(|| {
        let num = v.numer().to_f64().unwrap_or(f64::NAN);
        let den = v.denom().to_f64().unwrap_or(f64::NAN);
        num / den
    })
}

pub fn rational_int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Eigen-decomposition of a symmetric positive definite matrix together with
/// its inverse, keeping relative accuracy at both ends of the spectrum.
///
/// The large eigenpairs are read from `p`, the small ones from `p_inv`, with
/// the cut at the geometric midpoint where both error bounds coincide.
#[derive(Debug, Clone)]
pub struct GradedSpectrum {
    /// Ascending eigenvalues.
    pub eigenvalues: DVector<f64>,
    /// Unit eigenvectors as columns, matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl GradedSpectrum {
    pub fn new(p: &DMatrix<f64>, p_inv: &DMatrix<f64>) -> Result<Self, LinalgError> {
        let n = ensure_square(p)?;
        if p_inv.shape() != (n, n) {
            return Err(LinalgError::Dimension("inverse must match".into()));
        }
        let direct = sorted_eigen(p); // ascending
        let inverse = sorted_eigen(p_inv); // ascending, reciprocal order
        let lam_max = direct.0[n - 1];
        let mu_max = inverse.0[n - 1];
        let cut = (lam_max / mu_max).sqrt();
        let mut values = DVector::zeros(n);
        let mut vectors = DMatrix::zeros(n, n);
        for k in 0..n {
            // k-th smallest eigenvalue of p pairs with the k-th largest of p_inv
            let lam = direct.0[k];
            let inv_idx = n - 1 - k;
            if lam >= cut {
                values[k] = lam;
                vectors.set_column(k, &direct.1.column(k));
            } else {
                values[k] = 1.0 / inverse.0[inv_idx];
                vectors.set_column(k, &inverse.1.column(inv_idx));
            }
        }
        Ok(Self {
            eigenvalues: values,
            eigenvectors: vectors,
        })
    }

    /// Quadratic form `xᵀ p x` evaluated as a sum of non-negative terms.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let n = self.eigenvalues.len();
        let mut acc = 0.0;
        for k in 0..n {
            let c: f64 = self
                .eigenvectors
                .column(k)
                .iter()
                .zip(x)
                .map(|(u, v)| u * v)
                .sum();
            acc += self.eigenvalues[k] * c * c;
        }
        acc
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            eigenvalues: &self.eigenvalues * factor,
            eigenvectors: self.eigenvectors.clone(),
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    pub fn min_eigenvector(&self) -> DVector<f64> {
        self.eigenvectors.column(0).into_owned()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&self.eigenvalues);
        &self.eigenvectors * d * self.eigenvectors.transpose()
    }
}

fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn taylor_expm(a: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
        let n = a.nrows();
        let mut sum = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for k in 1..terms {
            term = &term * a / k as f64;
            sum += &term;
        }
        sum
    }

    #[test]
    fn expm_matches_taylor_series_on_moderate_norms() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.5, 0.3, -2.0, 1.0, 0.0, -1.5, 0.7]);
        let e = expm_scaled(&a, 1.0);
        let t = taylor_expm(&a, 80);
        for (x, y) in e.iter().zip(t.iter()) {
            assert_relative_eq!(*x, *y, max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn expm_of_nilpotent_block_is_truncated_series() {
        let n = 5;
        let nil = DMatrix::from_fn(n, n, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
        let e = expm_scaled(&nil, 2.0);
        // entry (0, k) = 2^k / k!
        let mut fact = 1.0;
        for k in 0..n {
            if k > 0 {
                fact *= k as f64;
            }
            assert_relative_eq!(e[(0, k)], 2f64.powi(k as i32) / fact, max_relative = 1e-13);
        }
    }

    #[test]
    fn expm_at_zero_time_is_identity() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(expm_scaled(&a, 0.0), DMatrix::identity(2, 2));
    }

    #[test]
    fn triangular_solver_agrees_with_kronecker() {
        let t = DMatrix::from_row_slice(3, 3, &[-0.5, 1.0, 0.3, 0.0, -0.7, 1.0, 0.0, 0.0, -1.2]);
        let q = DMatrix::identity(3, 3);
        let p1 = solve_triangular_lyapunov(&t, &q).unwrap();
        let p2 = solve_lyapunov_kronecker(&t, &q).unwrap();
        for (x, y) in p1.iter().zip(p2.iter()) {
            assert_relative_eq!(*x, *y, max_relative = 1e-10);
        }
        let resid = t.transpose() * &p1 + &p1 * &t + &q;
        assert!(resid.norm() < 1e-12);
    }

    #[test]
    fn triangular_solver_rejects_lower_entries_and_singular_operator() {
        let t = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, -1.0]);
        assert!(matches!(
            solve_triangular_lyapunov(&t, &DMatrix::identity(2, 2)),
            Err(LinalgError::NotTriangular { .. })
        ));
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            solve_triangular_lyapunov(&t, &DMatrix::identity(2, 2)),
            Err(LinalgError::SingularLyapunov { .. })
        ));
    }

    #[test]
    fn exact_inverse_round_trips() {
        let m: Vec<Vec<BigRational>> = vec![
            vec![rational_int(2), rational_int(1)],
            vec![rational_int(1), rational_int(3)],
        ];
        let inv = invert_exact(&m).unwrap();
        assert_eq!(inv[0][0], BigRational::new(3.into(), 5.into()));
        assert_eq!(inv[0][1], BigRational::new((-1).into(), 5.into()));
        assert_eq!(inv[1][1], BigRational::new(2.into(), 5.into()));
    }

    #[test]
    fn graded_spectrum_reconstructs_well_conditioned_matrix() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let inv = p.clone().try_inverse().unwrap();
        let s = GradedSpectrum::new(&p, &inv).unwrap();
        let r = s.to_matrix();
        for (x, y) in r.iter().zip(p.iter()) {
            assert_relative_eq!(*x, *y, max_relative = 1e-12);
        }
        let x = [0.3, -0.7];
        let direct = 2.0 * 0.09 + 2.0 * 0.3 * -0.7 + 3.0 * 0.49;
        assert_relative_eq!(s.quadratic_form(&x), direct, max_relative = 1e-12);
    }
}
