use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Norm index: a positive integer or infinity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormIndex {
    Finite(u32),
    Inf,
}

impl NormIndex {
    pub fn finite(p: u32) -> Self {
        assert!(p >= 1, "norm index must be at least 1");
        NormIndex::Finite(p)
    }

    /// Integer value for finite indices.
    pub fn as_u32(self) -> Option<u32> {
        match self {
            NormIndex::Finite(p) => Some(p),
            NormIndex::Inf => None,
        }
    }

    /// `p` as a float (`inf` for the max norm).
    pub fn as_f64(self) -> f64 {
        match self {
            NormIndex::Finite(p) => p as f64,
            NormIndex::Inf => f64::INFINITY,
        }
    }

    /// `x^(1/p)`, which is 1 for the max norm.
    pub fn root(self, x: f64) -> f64 {
        match self {
            NormIndex::Finite(1) => x,
            NormIndex::Finite(2) => x.sqrt(),
            NormIndex::Finite(p) => x.powf(1.0 / p as f64),
            NormIndex::Inf => 1.0,
        }
    }
}

impl fmt::Display for NormIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormIndex::Finite(p) => write!(f, "{p}"),
            NormIndex::Inf => write!(f, "inf"),
        }
    }
}

impl FromStr for NormIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") {
            return Ok(NormIndex::Inf);
        }
        match t.parse::<u32>() {
            Ok(p) if p >= 1 => Ok(NormIndex::Finite(p)),
            _ => Err(Error::InvalidInput(format!("bad norm index {s:?}"))),
        }
    }
}

impl Serialize for NormIndex {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            NormIndex::Finite(p) => s.serialize_u32(*p),
            NormIndex::Inf => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for NormIndex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u32),
            S(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::N(p) if p >= 1 => Ok(NormIndex::Finite(p)),
            Raw::N(p) => Err(Error::InvalidInput(format!("bad norm index {p}"))),
            Raw::S(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// lp norm of a slice.
pub fn lp_norm(x: &[f64], p: NormIndex) -> f64 {
    match p {
        NormIndex::Inf => x.iter().fold(0.0, |m, v| m.max(v.abs())),
        NormIndex::Finite(1) => x.iter().map(|v| v.abs()).sum(),
        NormIndex::Finite(2) => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        NormIndex::Finite(p) => {
            // scale by the max entry to keep large powers finite
            let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if m == 0.0 {
                return 0.0;
            }
            let s: f64 = x.iter().map(|v| (v.abs() / m).powi(p as i32)).sum();
            m * s.powf(1.0 / p as f64)
        }
    }
}

/// `sum |x_i|^p` without the root; finite p only.
pub fn lp_pow_sum(x: &[f64], p: u32) -> f64 {
    match p {
        1 => x.iter().map(|v| v.abs()).sum(),
        2 => x.iter().map(|v| v * v).sum(),
        _ => x.iter().map(|v| v.abs().powi(p as i32)).sum(),
    }
}

pub fn lp_dist(x: &[f64], y: &[f64], p: NormIndex) -> f64 {
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    lp_norm(&diff, p)
}
