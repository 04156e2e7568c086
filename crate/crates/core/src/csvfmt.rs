//! Shared full-precision float formatting for CSV artifacts.

/// 17 significant digits, round-trippable.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

pub fn parse_f64(s: &str) -> Result<f64, String> {
    s.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}"))
}

/// Serde codec for f64 fields that may be non-finite: JSON numbers when
/// finite, otherwise the strings `inf`, `-inf` or `NaN`.
pub mod json_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            v.serialize(s)
        } else {
            super::fmt_f64(*v).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => super::parse_f64(&t).map_err(serde::de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[derive(serde::Serialize, serde::Deserialize)]
    struct Holder(#[serde(with = "json_f64")] f64);

    #[test]
    fn json_codec_keeps_non_finite_values() {
        for v in [f64::INFINITY, f64::NEG_INFINITY, 1.5, 0.1 + 0.2] {
            let s = serde_json::to_string(&Holder(v)).unwrap();
            assert_eq!(serde_json::from_str::<Holder>(&s).unwrap().0.to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(serde_json::to_string(&Holder(f64::INFINITY)).unwrap(), "\"inf\"");
        assert!(serde_json::from_str::<Holder>("\"NaN\"").unwrap().0.is_nan());
    }

    proptest! {
        #[test]
        fn round_trips_bit_exactly(v in proptest::num::f64::ANY) {
            let back = parse_f64(&fmt_f64(v)).unwrap();
            if v.is_nan() {
                prop_assert!(back.is_nan());
            } else {
                prop_assert_eq!(back.to_bits(), v.to_bits());
            }
        }
    }
}
