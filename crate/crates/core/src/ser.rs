//! Serde adapter for `f64` fields that may hold `NaN` or `±∞`: finite values
//! stay JSON numbers, the rest become the strings `"NaN"`, `"inf"`, `"-inf"`.

use core::fmt;

use serde::de::{self, Visitor};
use serde::{Deserializer, Serializer};

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("NaN")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

struct F64Visitor;

impl Visitor<'_> for F64Visitor {
    type Value = f64;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a number or one of \"NaN\", \"inf\", \"-inf\"")
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
        Ok(v)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
        Ok(v as f64)
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
        Ok(v as f64)
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
        match v {
            "NaN" => Ok(f64::NAN),
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
        }
    }
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    d.deserialize_any(F64Visitor)
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Debug, Serialize, Deserialize)]
    struct S {
        #[serde(with = "super")]
        v: f64,
    }

    #[test]
    fn non_finite_values_round_trip() {
        for v in [0.5, -3.0, f64::INFINITY, f64::NEG_INFINITY, f64::NAN, 1e-300] {
            let text = serde_json::to_string(&S { v }).unwrap();
            let back: S = serde_json::from_str(&text).unwrap();
            assert!(back.v.to_bits() == v.to_bits() || (v.is_nan() && back.v.is_nan()), "{text}");
        }
        assert_eq!(serde_json::to_string(&S { v: f64::INFINITY }).unwrap(), r#"{"v":"inf"}"#);
        assert_eq!(serde_json::from_str::<S>(r#"{"v":3}"#).unwrap().v, 3.0);
        assert!(serde_json::from_str::<S>(r#"{"v":"huge"}"#).is_err());
    }
}
