use serde::{Deserialize, Serialize};

/// Piecewise-constant disturbance on `[0, ∞)` with right-open pieces.
///
/// `values[i]` holds on `[breakpoints[i], breakpoints[i+1])`; the last value
/// is the tail. Adjacent equal values are merged, so equal signals compare
/// equal structurally.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSignal {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SignalError {
    #[error("signal needs at least one piece")]
    Empty,
    #[error("breakpoints and values differ in length")]
    Length,
    #[error("first breakpoint must be 0, got {0}")]
    Start(f64),
    #[error("breakpoints must be finite and strictly increasing")]
    Order,
    #[error("non-finite disturbance value")]
    Value,
}

impl DisturbanceSignal {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, SignalError> {
        if breakpoints.is_empty() {
            return Err(SignalError::Empty);
        }
        if breakpoints.len() != values.len() {
            return Err(SignalError::Length);
        }
        if breakpoints[0] != 0.0 {
            return Err(SignalError::Start(breakpoints[0]));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) || breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SignalError::Order);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SignalError::Value);
        }
        Ok(Self::normalized(breakpoints, values))
    }

    pub fn constant(v: f64) -> Self {
        Self {
            breakpoints: vec![0.0],
            values: vec![v],
        }
    }

    pub fn from_pieces(pieces: &[(f64, f64)]) -> Result<Self, SignalError> {
        Self::new(pieces.iter().map(|p| p.0).collect(), pieces.iter().map(|p| p.1).collect())
    }

    fn normalized(breakpoints: Vec<f64>, values: Vec<f64>) -> Self {
        let mut b = Vec::with_capacity(breakpoints.len());
        let mut v: Vec<f64> = Vec::with_capacity(values.len());
        for (bp, val) in breakpoints.into_iter().zip(values) {
            if v.last().is_some_and(|last| last.to_bits() == val.to_bits()) {
                continue;
            }
            b.push(bp);
            v.push(val);
        }
        Self { breakpoints: b, values: v }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tail_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.breakpoints.iter().copied().zip(self.values.iter().copied())
    }

    /// Index of the piece containing `t`.
    pub fn piece_index(&self, t: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= t).saturating_sub(1)
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.values[self.piece_index(t.max(0.0))]
    }

    /// Breakpoints strictly inside `(a, b)`.
    pub fn breakpoints_in(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        self.breakpoints.iter().copied().filter(move |&x| x > a && x < b)
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `d(· + tau)`.
    pub fn shift(&self, tau: f64) -> Self {
        if tau <= 0.0 {
            return self.clone();
        }
        let head = self.piece_index(tau);
        let mut b = vec![0.0];
        let mut v = vec![self.values[head]];
        for i in head + 1..self.breakpoints.len() {
            b.push(self.breakpoints[i] - tau);
            v.push(self.values[i]);
        }
        Self::normalized(b, v)
    }

    /// Equal to `d1` on `[0, t)` and to `d2(· - t)` afterwards.
    pub fn concat(d1: &Self, d2: &Self, t: f64) -> Self {
        if t <= 0.0 {
            return d2.clone();
        }
        let mut b = Vec::new();
        let mut v = Vec::new();
        for (bp, val) in d1.pieces() {
            if bp >= t {
                break;
            }
            b.push(bp);
            v.push(val);
        }
        for (bp, val) in d2.pieces() {
            b.push(bp + t);
            v.push(val);
        }
        Self::normalized(b, v)
    }

    /// Multiplies every value by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self::normalized(self.breakpoints.clone(), self.values.iter().map(|v| v * c).collect())
    }
}

impl Serialize for DisturbanceSignal {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<(f64, f64)> = self.pieces().collect();
        pairs.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DisturbanceSignal {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let pairs = Vec::<(f64, f64)>::deserialize(d)?;
        Self::from_pieces(&pairs).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shift_examples() {
        let d = DisturbanceSignal::new(vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(d.shift(0.0), d);
        let s = d.shift(1.5);
        assert_eq!(s.breakpoints(), &[0.0, 0.5]);
        assert_eq!(s.values(), &[2.0, 3.0]);
        assert_eq!(d.shift(7.0), DisturbanceSignal::constant(3.0));
    }

    #[test]
    fn concat_examples() {
        let a = DisturbanceSignal::constant(1.0);
        assert_eq!(DisturbanceSignal::concat(&a, &a, 2.0), a);
        let b = DisturbanceSignal::constant(-4.0);
        let c = DisturbanceSignal::concat(&a, &b, 1.0);
        assert_eq!(c.breakpoints(), &[0.0, 1.0]);
        assert_eq!(c.values(), &[1.0, -4.0]);
        assert_eq!(c.value_at(1.0), -4.0);
        assert_eq!(c.value_at(0.999), 1.0);
    }

    #[test]
    fn validation_and_json() {
        assert!(DisturbanceSignal::new(vec![0.5], vec![1.0]).is_err());
        assert!(DisturbanceSignal::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        let d = DisturbanceSignal::new(vec![0.0, 0.25], vec![1.5, -2.0]).unwrap();
        let js = serde_json::to_string(&d).unwrap();
        assert_eq!(js, "[[0.0,1.5],[0.25,-2.0]]");
        let back: DisturbanceSignal = serde_json::from_str(&js).unwrap();
        assert_eq!(back, d);
    }

    fn arb_signal() -> impl Strategy<Value = DisturbanceSignal> {
        proptest::collection::vec((0.01f64..2.0, -3.0f64..3.0), 1..8).prop_map(|p| {
            let mut t = 0.0;
            let mut b = Vec::new();
            let mut v = Vec::new();
            for (dt, val) in p {
                b.push(t);
                v.push(val);
                t += dt;
            }
            DisturbanceSignal::new(b, v).unwrap()
        })
    }

    proptest! {
        #[test]
        fn shift_of_concat_recovers_second(d1 in arb_signal(), d2 in arb_signal(), t in 0.01f64..5.0, probes in proptest::collection::vec(0.0f64..10.0, 16)) {
            let c = DisturbanceSignal::concat(&d1, &d2, t);
            let s = c.shift(t);
            for p in probes {
                prop_assert_eq!(s.value_at(p), d2.value_at(p));
                if p < t {
                    prop_assert_eq!(c.value_at(p), d1.value_at(p));
                }
            }
        }

        #[test]
        fn shift_composes(d in arb_signal(), a in 0.0f64..3.0, b in 0.0f64..3.0, probes in proptest::collection::vec(0.0f64..10.0, 16)) {
            let lhs = d.shift(a).shift(b);
            for p in probes {
                prop_assert_eq!(lhs.value_at(p), d.value_at(p + a + b));
            }
        }
    }
}
