//! Serde helpers writing infinite floats as `"inf"` / `"-inf"`.

use serde::{de, Deserialize, Deserializer, Serializer};

pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if x.is_infinite() {
        s.serialize_str(if *x > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*x)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Repr {
    Num(f64),
    Text(String),
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    match Repr::deserialize(d)? {
        Repr::Num(x) => Ok(x),
        Repr::Text(t) => parse(&t).ok_or_else(|| de::Error::custom(format!("not a number: {t:?}"))),
    }
}

pub fn parse(text: &str) -> Option<f64> {
    match text.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        other => other.parse().ok().filter(|x: &f64| !x.is_nan()),
    }
}

#[cfg(test)]
mod tests {
    #[derive(serde::Serialize, serde::Deserialize, PartialEq, Debug)]
    struct W(#[serde(with = "super")] f64);

    #[test]
    fn round_trip() {
        for x in [1.5, f64::INFINITY, f64::NEG_INFINITY, -0.25] {
            let s = serde_json::to_string(&W(x)).unwrap();
            assert_eq!(serde_json::from_str::<W>(&s).unwrap(), W(x));
        }
        assert_eq!(serde_json::to_string(&W(f64::INFINITY)).unwrap(), "\"inf\"");
        assert_eq!(serde_json::from_str::<W>("\"-Infinity\"").unwrap(), W(f64::NEG_INFINITY));
    }
}
