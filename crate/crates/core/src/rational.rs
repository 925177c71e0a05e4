//! Exact rational utilizations and their string form (`"3/8"`, `"1"`).

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use serde::{Deserialize, Deserializer, Serializer};

pub type Rational = Ratio<u64>;

pub fn to_big(r: Rational) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

pub fn format(r: &Rational) -> String {
    if *r.denom() == 1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn parse(s: &str) -> Result<Rational, String> {
    let bad = || format!("expected a rational like `3/8`, got `{s}`");
    let (n, d) = match s.trim().split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s.trim(), "1"),
    };
    let n: u64 = n.parse().map_err(|_| bad())?;
    let d: u64 = d.parse().map_err(|_| bad())?;
    if d == 0 {
        return Err(bad());
    }
    Ok(Rational::new(n, d))
}

pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format(r))
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
    let s = String::deserialize(d)?;
    parse(&s).map_err(serde::de::Error::custom)
}

/// Serde adapter for maps of rationals.
pub mod map {
    use indexmap::IndexMap;
    use serde::ser::SerializeMap;
    use serde::{Deserialize, Deserializer, Serializer};

    use super::Rational;

    pub fn serialize<S: Serializer>(m: &IndexMap<String, Rational>, s: S) -> Result<S::Ok, S::Error> {
        let mut out = s.serialize_map(Some(m.len()))?;
        for (k, v) in m {
            out.serialize_entry(k, &super::format(v))?;
        }
        out.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<IndexMap<String, Rational>, D::Error> {
        let raw = IndexMap::<String, String>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| super::parse(&v).map(|r| (k, r)))
            .collect::<Result<_, _>>()
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for s in ["3/8", "1", "0", "1/4"] {
            assert_eq!(format(&parse(s).unwrap()), s);
        }
        assert_eq!(parse("2/8").unwrap(), Rational::new(1, 4));
        assert!(parse("1/0").is_err());
        assert!(parse("x").is_err());
    }
}
