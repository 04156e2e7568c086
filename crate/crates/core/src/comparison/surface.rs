use super::ComparisonError;
use serde::{Deserialize, Serialize};

/// Monotonicity pattern of a two-argument table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurfaceKind {
    /// Non-decreasing in r, non-increasing in t.
    KL,
    /// Non-decreasing in both arguments (reachability tables such as μ̃).
    Growth,
    /// Non-decreasing in t only (increments such as χ(r, t) = μ̃(r, t) − μ̃(r, 0)).
    TimeGrowth,
}

/// Samples `values[ir][it] = β(r_grid[ir], t_grid[it])`, bilinear in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KLSurface {
    r_grid: Vec<f64>,
    t_grid: Vec<f64>,
    values: Vec<Vec<f64>>,
    kind: SurfaceKind,
}

impl KLSurface {
    pub fn new(
        r_grid: Vec<f64>,
        t_grid: Vec<f64>,
        values: Vec<Vec<f64>>,
        kind: SurfaceKind,
    ) -> Result<Self, ComparisonError> {
        let s = Self {
            r_grid,
            t_grid,
            values,
            kind,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn from_fn(
        r_grid: Vec<f64>,
        t_grid: Vec<f64>,
        kind: SurfaceKind,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, ComparisonError> {
        let values = r_grid
            .iter()
            .map(|&r| t_grid.iter().map(|&t| f(r, t)).collect())
            .collect();
        Self::new(r_grid, t_grid, values, kind)
    }

    fn validate(&self) -> Result<(), ComparisonError> {
        let bad = |m: String| Err(ComparisonError::InvalidTable(m));
        if self.r_grid.is_empty() || self.t_grid.is_empty() {
            return bad("empty grid".into());
        }
        for g in [&self.r_grid, &self.t_grid] {
            if g[0] < 0.0 || g.windows(2).any(|w| w[1] <= w[0]) || g.iter().any(|v| !v.is_finite()) {
                return bad("grids must be finite, nonnegative and strictly increasing".into());
            }
        }
        if self.values.len() != self.r_grid.len() || self.values.iter().any(|row| row.len() != self.t_grid.len()) {
            return bad("value matrix shape does not match grids".into());
        }
        for (ir, row) in self.values.iter().enumerate() {
            for (it, v) in row.iter().enumerate() {
                // +∞ marks diverged cells in reachability tables
                if v.is_nan() || *v < 0.0 || (self.kind == SurfaceKind::KL && !v.is_finite()) {
                    return bad(format!("invalid entry {v} at ({ir},{it})"));
                }
            }
        }
        let r_monotone = self.kind != SurfaceKind::TimeGrowth;
        for it in (0..self.t_grid.len()).filter(|_| r_monotone) {
            for ir in 1..self.r_grid.len() {
                if self.values[ir][it] < self.values[ir - 1][it] {
                    return bad(format!("r-slice at t={} is decreasing", self.t_grid[it]));
                }
            }
        }
        for (ir, row) in self.values.iter().enumerate() {
            let ok = match self.kind {
                SurfaceKind::KL => row.windows(2).all(|w| w[1] <= w[0]),
                SurfaceKind::Growth | SurfaceKind::TimeGrowth => row.windows(2).all(|w| w[1] >= w[0]),
            };
            if !ok {
                return bad(format!("t-slice at r={} has the wrong monotonicity", self.r_grid[ir]));
            }
        }
        if self.kind == SurfaceKind::KL && self.r_grid[0] == 0.0 && self.values[0].iter().any(|v| *v != 0.0) {
            return bad("KL surface must vanish at r=0".into());
        }
        Ok(())
    }

    pub fn r_grid(&self) -> &[f64] {
        &self.r_grid
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn kind(&self) -> SurfaceKind {
        self.kind
    }

    pub fn at(&self, ir: usize, it: usize) -> f64 {
        self.values[ir][it]
    }

    /// Bilinear interpolation; r beyond the grid extrapolates linearly from
    /// the last r-segment, t beyond the grid holds the last column.
    pub fn eval(&self, r: f64, t: f64) -> f64 {
        let (ir, wr) = locate(&self.r_grid, r.max(0.0), true);
        let (it, wt) = locate(&self.t_grid, t.max(0.0), false);
        let v = |i: usize, j: usize| self.values[i][j];
        let row = |i: usize| {
            if wt == 0.0 {
                v(i, it)
            } else {
                v(i, it) + wt * (v(i, it + 1) - v(i, it))
            }
        };
        if wr == 0.0 {
            row(ir)
        } else {
            let a = row(ir);
            a + wr * (row(ir + 1) - a)
        }
    }

    /// True when `β(r, t) <= other(r, t) + tol` at every grid point of `self`.
    pub fn dominated_by(&self, other: impl Fn(f64, f64) -> f64, tol: f64) -> Option<(f64, f64, f64, f64)> {
        for (ir, &r) in self.r_grid.iter().enumerate() {
            for (it, &t) in self.t_grid.iter().enumerate() {
                let o = other(r, t);
                if self.values[ir][it] > o + tol {
                    return Some((r, t, self.values[ir][it], o));
                }
            }
        }
        None
    }
}

/// Returns `(i, w)` with the evaluation point at `grid[i] + w (grid[i+1] - grid[i])`.
/// With `extrapolate` the weight may exceed 1 on the last segment.
fn locate(grid: &[f64], x: f64, extrapolate: bool) -> (usize, f64) {
    let n = grid.len();
    if n == 1 || x <= grid[0] {
        return (0, 0.0);
    }
    if x >= grid[n - 1] {
        if x == grid[n - 1] || !extrapolate {
            return (n - 1, 0.0);
        }
        let w = (x - grid[n - 2]) / (grid[n - 1] - grid[n - 2]);
        return (n - 2, w);
    }
    let i = grid.partition_point(|&g| g <= x) - 1;
    if x == grid[i] {
        return (i, 0.0);
    }
    (i, (x - grid[i]) / (grid[i + 1] - grid[i]))
}
