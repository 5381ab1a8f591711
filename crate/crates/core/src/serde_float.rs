//! Serde helper writing non-finite floats as strings so JSON can carry them.

use serde::de::Error;
use serde::{Deserialize, Deserializer, Serializer};

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&v.to_string())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Repr {
    Number(f64),
    Text(String),
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    match Repr::deserialize(d)? {
        Repr::Number(v) => Ok(v),
        Repr::Text(t) => t.trim().parse::<f64>().map_err(|_| D::Error::custom(format!("invalid number '{t}'"))),
    }
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct W {
        #[serde(with = "super")]
        v: f64,
    }

    #[test]
    fn round_trips_infinity_through_json() {
        for v in [f64::INFINITY, f64::NEG_INFINITY, 0.1, -3.5e-300] {
            let s = serde_json::to_string(&W { v }).unwrap();
            assert_eq!(serde_json::from_str::<W>(&s).unwrap(), W { v });
        }
        assert_eq!(serde_json::from_str::<W>(r#"{"v":"inf"}"#).unwrap().v, f64::INFINITY);
    }
}
