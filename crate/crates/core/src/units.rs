//! Frequency units.
//!
//! Every frequency and rate is stored internally in rad/s (or s⁻¹ for
//! rates). Values quoted as "2π × f" enter as `2π·f`.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error};

/// Unit tag attached to every frequency-like quantity read from outside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyUnit {
    /// Ordinary frequency in cycles per second; stored as `2π·value`.
    Hz,
    /// Value `v` denotes `2π × v Hz`; stored as `2π·v`.
    TwoPiHz,
    /// Already an angular frequency (or a plain rate in s⁻¹).
    RadPerS,
}

impl FrequencyUnit {
    pub fn to_angular(self, value: f64) -> f64 {
        match self {
            FrequencyUnit::Hz | FrequencyUnit::TwoPiHz => TAU * value,
            FrequencyUnit::RadPerS => value,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            FrequencyUnit::Hz => "hz",
            FrequencyUnit::TwoPiHz => "two_pi_hz",
            FrequencyUnit::RadPerS => "rad_per_s",
        }
    }
}

impl fmt::Display for FrequencyUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for FrequencyUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hz" => Ok(FrequencyUnit::Hz),
            "two_pi_hz" => Ok(FrequencyUnit::TwoPiHz),
            "rad_per_s" => Ok(FrequencyUnit::RadPerS),
            other => Err(invalid(
                "unit",
                format!("unknown unit tag `{other}` (expected hz, two_pi_hz or rad_per_s)"),
            )),
        }
    }
}

/// A number with an explicit frequency unit, written as `"<value> <unit>"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frequency {
    pub value: f64,
    pub unit: FrequencyUnit,
}

impl Frequency {
    pub fn new(value: f64, unit: FrequencyUnit) -> Self {
        Self { value, unit }
    }

    pub fn two_pi_hz(value: f64) -> Self {
        Self::new(value, FrequencyUnit::TwoPiHz)
    }

    pub fn rad_per_s(value: f64) -> Self {
        Self::new(value, FrequencyUnit::RadPerS)
    }

    /// Value in rad/s.
    pub fn angular(&self) -> f64 {
        self.unit.to_angular(self.value)
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.value, self.unit)
    }
}

impl FromStr for Frequency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split_whitespace();
        let (Some(value), Some(unit), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(invalid(
                "quantity",
                format!("`{s}` is not of the form \"<value> <unit>\""),
            ));
        };
        let value: f64 = value
            .parse()
            .map_err(|_| invalid("quantity", format!("`{value}` is not a number")))?;
        if !value.is_finite() {
            return Err(invalid("quantity", format!("`{s}` is not finite")));
        }
        Ok(Frequency::new(value, unit.parse()?))
    }
}

impl Serialize for Frequency {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Frequency {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `2π × f` in rad/s.
pub fn two_pi(f: f64) -> f64 {
    TAU * f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tagged_values() {
        let f: Frequency = "1.22e3 two_pi_hz".parse().unwrap();
        assert!((f.angular() - 7665.48607).abs() < 1e-4);
        let r: Frequency = "45 rad_per_s".parse().unwrap();
        assert_eq!(r.angular(), 45.0);
        let h: Frequency = "1 hz".parse().unwrap();
        assert_eq!(h.angular(), TAU);
    }

    #[test]
    fn rejects_malformed() {
        assert!("48e6hz".parse::<Frequency>().is_err());
        assert!("48e6 ghz".parse::<Frequency>().is_err());
        assert!("abc hz".parse::<Frequency>().is_err());
        assert!("1 hz extra".parse::<Frequency>().is_err());
    }

    #[test]
    fn display_round_trips() {
        let f = Frequency::two_pi_hz(5.77e9);
        let back: Frequency = f.to_string().parse().unwrap();
        assert_eq!(f, back);
    }
}
