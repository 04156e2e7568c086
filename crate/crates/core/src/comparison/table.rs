use super::ComparisonError;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassTag {
    K,
    Kinf,
    L,
    PositiveDefinite,
}

impl fmt::Display for ClassTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ClassTag::K => "K",
            ClassTag::Kinf => "Kinf",
            ClassTag::L => "L",
            ClassTag::PositiveDefinite => "PositiveDefinite",
        };
        f.write_str(s)
    }
}

impl FromStr for ClassTag {
    type Err = ComparisonError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "K" => Ok(ClassTag::K),
            "Kinf" => Ok(ClassTag::Kinf),
            "L" => Ok(ClassTag::L),
            "PositiveDefinite" => Ok(ClassTag::PositiveDefinite),
            other => Err(ComparisonError::Parse(format!("unknown class tag {other:?}"))),
        }
    }
}

/// Behaviour beyond the last abscissa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Extrapolation {
    /// Continue from the last sample with the given slope.
    Linear { slope: f64 },
    /// Hold the last sample.
    Hold,
}

/// Piecewise-linear interpolant of a monotone (or positive definite)
/// function of one nonnegative argument.
///
/// Non-decreasing data with flat stretches is accepted for K and K∞; the
/// inverse then returns the smallest preimage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedMonotone {
    grid: Vec<f64>,
    values: Vec<f64>,
    class: ClassTag,
    extrapolation: Extrapolation,
}

impl TabulatedMonotone {
    pub fn new(
        grid: Vec<f64>,
        values: Vec<f64>,
        class: ClassTag,
        extrapolation: Extrapolation,
    ) -> Result<Self, ComparisonError> {
        let t = Self {
            grid,
            values,
            class,
            extrapolation,
        };
        t.validate()?;
        Ok(t)
    }

    /// Samples `f` on `grid`. K∞ tables extrapolate with the slope of the
    /// last segment (floored at a tiny positive value), all others hold.
    pub fn from_fn(grid: Vec<f64>, class: ClassTag, f: impl Fn(f64) -> f64) -> Result<Self, ComparisonError> {
        let values: Vec<f64> = grid.iter().map(|&s| f(s)).collect();
        let extrapolation = match class {
            ClassTag::Kinf => Extrapolation::Linear {
                slope: last_slope(&grid, &values).max(1e-12),
            },
            _ => Extrapolation::Hold,
        };
        Self::new(grid, values, class, extrapolation)
    }

    /// Identity on `[0, max]` sampled at `n + 1` equispaced points.
    pub fn identity(max: f64, n: usize) -> Self {
        let grid = uniform_grid(max, n);
        Self {
            values: grid.clone(),
            grid,
            class: ClassTag::Kinf,
            extrapolation: Extrapolation::Linear { slope: 1.0 },
        }
    }

    fn validate(&self) -> Result<(), ComparisonError> {
        let bad = |m: String| Err(ComparisonError::InvalidTable(m));
        if self.grid.is_empty() || self.grid.len() != self.values.len() {
            return bad(format!(
                "grid and values must be non-empty and equal length ({} vs {})",
                self.grid.len(),
                self.values.len()
            ));
        }
        if self.grid.iter().chain(&self.values).any(|v| !v.is_finite()) {
            return bad("non-finite entry".into());
        }
        if self.grid[0] < 0.0 {
            return bad("abscissae must be nonnegative".into());
        }
        if self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("abscissae must be strictly increasing".into());
        }
        if self.values.iter().any(|v| *v < 0.0) {
            return bad("values must be nonnegative".into());
        }
        match self.class {
            ClassTag::K | ClassTag::Kinf => {
                if self.grid[0] != 0.0 || self.values[0] != 0.0 {
                    return bad(format!("class {} requires value 0 at abscissa 0", self.class));
                }
                if self.values.windows(2).any(|w| w[1] < w[0]) {
                    return bad(format!("class {} requires non-decreasing values", self.class));
                }
                if self.values.len() > 1 && self.values[self.values.len() - 1] <= 0.0 {
                    return bad("class K table is identically zero".into());
                }
            }
            ClassTag::L => {
                if self.values.windows(2).any(|w| w[1] > w[0]) {
                    return bad("class L requires non-increasing values".into());
                }
            }
            ClassTag::PositiveDefinite => {
                for (s, v) in self.grid.iter().zip(&self.values) {
                    if (*s == 0.0) != (*v == 0.0) {
                        return bad(format!("positive definite table has value {v} at {s}"));
                    }
                }
            }
        }
        match (self.class, self.extrapolation) {
            (ClassTag::Kinf, Extrapolation::Linear { slope }) if slope > 0.0 && slope.is_finite() => {}
            (ClassTag::Kinf, e) => return bad(format!("class Kinf needs a positive linear slope, got {e:?}")),
            (ClassTag::L, Extrapolation::Linear { .. }) => {
                return bad("class L tables must hold their limit".into())
            }
            (_, Extrapolation::Linear { slope }) if !(slope >= 0.0 && slope.is_finite()) => {
                return bad(format!("invalid extrapolation slope {slope}"))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn class(&self) -> ClassTag {
        self.class
    }

    pub fn extrapolation(&self) -> Extrapolation {
        self.extrapolation
    }

    pub fn with_class(mut self, class: ClassTag) -> Result<Self, ComparisonError> {
        self.class = class;
        if class != ClassTag::Kinf {
            if let Extrapolation::Linear { .. } = self.extrapolation {
                if class == ClassTag::L {
                    self.extrapolation = Extrapolation::Hold;
                }
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn max_abscissa(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }

    /// Evaluates the interpolant. Knot hits return the stored sample exactly.
    pub fn eval(&self, s: f64) -> f64 {
        let s = if s.is_nan() { return f64::NAN } else { s.max(0.0) };
        let n = self.grid.len();
        if s <= self.grid[0] {
            return self.values[0];
        }
        let last = n - 1;
        if s >= self.grid[last] {
            if s == self.grid[last] {
                return self.values[last];
            }
            return match self.extrapolation {
                Extrapolation::Linear { slope } => self.values[last] + slope * (s - self.grid[last]),
                Extrapolation::Hold => self.values[last],
            };
        }
        let i = self.grid.partition_point(|&g| g <= s);
        // grid[i-1] <= s < grid[i]
        let (g0, g1) = (self.grid[i - 1], self.grid[i]);
        if s == g0 {
            return self.values[i - 1];
        }
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        let w = (s - g0) / (g1 - g0);
        v0 + w * (v1 - v0)
    }

    /// Smallest `s` with `eval(s) >= v` for K and K∞ tables.
    pub fn inverse(&self, v: f64) -> Result<f64, ComparisonError> {
        if !matches!(self.class, ClassTag::K | ClassTag::Kinf) {
            return Err(ComparisonError::InvalidParameter(format!(
                "inverse requires class K or Kinf, got {}",
                self.class
            )));
        }
        if v.is_nan() {
            return Err(ComparisonError::InvalidParameter("NaN argument".into()));
        }
        if v <= 0.0 {
            return Ok(0.0);
        }
        let last = self.grid.len() - 1;
        if v > self.values[last] {
            return match self.extrapolation {
                Extrapolation::Linear { slope } if slope > 0.0 => {
                    Ok(self.grid[last] + (v - self.values[last]) / slope)
                }
                _ => Err(ComparisonError::NotInvertible(v)),
            };
        }
        let i = self.values.partition_point(|&y| y < v);
        if self.values[i] == v || i == 0 {
            return Ok(self.grid[i]);
        }
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        let (g0, g1) = (self.grid[i - 1], self.grid[i]);
        Ok(g0 + (v - v0) / (v1 - v0) * (g1 - g0))
    }

    /// Inverse K∞ table with the knots swapped. A flat stretch keeps only
    /// its smallest preimage, so the result never exceeds the inverse.
    pub fn inverse_table(&self) -> Result<Self, ComparisonError> {
        let slope = match (self.class, self.extrapolation) {
            (ClassTag::Kinf, Extrapolation::Linear { slope }) => slope,
            _ => {
                return Err(ComparisonError::InvalidParameter(format!(
                    "inverse_table requires a Kinf table, got {}",
                    self.class
                )))
            }
        };
        let mut grid: Vec<f64> = Vec::with_capacity(self.grid.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.grid.len());
        for (&s, &v) in self.grid.iter().zip(&self.values) {
            if grid.last().is_none_or(|&last| v > last) {
                grid.push(v);
                values.push(s);
            }
        }
        Self::new(grid, values, ClassTag::Kinf, Extrapolation::Linear { slope: 1.0 / slope })
    }

    /// Pointwise composition `self ∘ inner` resampled on `inner`'s grid.
    pub fn compose(&self, inner: &TabulatedMonotone, class: ClassTag) -> Result<Self, ComparisonError> {
        let values: Vec<f64> = inner.grid.iter().map(|&s| self.eval(inner.eval(s))).collect();
        let extrapolation = match class {
            ClassTag::Kinf => Extrapolation::Linear {
                slope: last_slope(&inner.grid, &values).max(1e-12),
            },
            _ => Extrapolation::Hold,
        };
        Self::new(inner.grid.clone(), values, class, extrapolation)
    }
}

pub(crate) fn last_slope(grid: &[f64], values: &[f64]) -> f64 {
    let n = grid.len();
    if n < 2 {
        return 1.0;
    }
    (values[n - 1] - values[n - 2]) / (grid[n - 1] - grid[n - 2])
}

pub(crate) fn uniform_grid(max: f64, n: usize) -> Vec<f64> {
    let n = n.max(1);
    (0..=n).map(|i| max * i as f64 / n as f64).collect()
}
