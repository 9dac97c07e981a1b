//! Speed sequences a_n governing the deviation scale.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Closed-form family for the speed a_n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum SpeedSequence {
    /// a_n = coeff * n^{-gamma}, gamma > 0.
    PowerLaw {
        gamma: f64,
        #[serde(default = "one")]
        coeff: f64,
    },
    /// a_n = value for every n. Constructible for diagnostics; never passes
    /// `validate_on_grid` since it does not decrease.
    Constant { value: f64 },
    /// Explicit per-n table. JSON object keys are strings ("100": 0.05).
    Table {
        #[serde(deserialize_with = "table_keys")]
        values: BTreeMap<u64, f64>,
    },
}

fn one() -> f64 {
    1.0
}

/// Accept the stringly JSON object keys that internally tagged enums see.
fn table_keys<'de, D>(d: D) -> std::result::Result<BTreeMap<u64, f64>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let raw = BTreeMap::<String, f64>::deserialize(d)?;
    raw.into_iter()
        .map(|(k, v)| {
            k.parse::<u64>()
                .map(|k| (k, v))
                .map_err(|_| serde::de::Error::custom(format!("table key `{k}` is not an integer")))
        })
        .collect()
}

impl SpeedSequence {
    pub fn power_law(gamma: f64) -> Self {
        SpeedSequence::PowerLaw { gamma, coeff: 1.0 }
    }

    /// a_n; errors on nonpositive values or a missing table entry.
    pub fn value(&self, n: u64) -> Result<f64> {
        let a = match self {
            SpeedSequence::PowerLaw { gamma, coeff } => coeff * (n as f64).powf(-gamma),
            SpeedSequence::Constant { value } => *value,
            SpeedSequence::Table { values } => *values
                .get(&n)
                .ok_or_else(|| Error::InvalidSpeed(format!("no table entry for n = {n}")))?,
        };
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidSpeed(format!("a_{n} = {a} is not positive")));
        }
        Ok(a)
    }

    /// Check a_n > 0 on the grid and strict decrease beyond `n0`.
    pub fn validate_on_grid(&self, grid: &[u64], n0: u64) -> Result<()> {
        let mut prev: Option<(u64, f64)> = None;
        for &n in grid {
            let a = self.value(n)?;
            if let Some((pn, pa)) = prev {
                if n > n0 && pn > n0 && a >= pa {
                    return Err(Error::InvalidSpeed(format!(
                        "a_n not strictly decreasing past n0 = {n0}: a_{pn} = {pa}, a_{n} = {a}"
                    )));
                }
            }
            prev = Some((n, a));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_law_values() {
        let a = SpeedSequence::power_law(0.5);
        assert!((a.value(100).unwrap() - 0.1).abs() < 1e-15);
        a.validate_on_grid(&[10, 100, 1000], 0).unwrap();
    }

    #[test]
    fn constant_fails_decrease() {
        let a = SpeedSequence::Constant { value: 0.1 };
        assert!(a.validate_on_grid(&[10, 20, 30], 0).is_err());
        assert!((a.value(5).unwrap() - 0.1).abs() < 1e-16);
    }

    #[test]
    fn table_lookup_and_gaps() {
        let mut values = BTreeMap::new();
        values.insert(10, 0.5);
        values.insert(20, 0.25);
        let a = SpeedSequence::Table { values };
        assert_eq!(a.value(20).unwrap(), 0.25);
        assert!(a.value(15).is_err());
    }

    #[test]
    fn nonpositive_rejected() {
        let a = SpeedSequence::Constant { value: 0.0 };
        assert!(a.value(1).is_err());
    }
}
