//! Aggregation functions mapping a server-cost row to an expert's true cost.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggregationSpec {
    Sum,
    PowerOfSum { q: u32 },
    Max,
    Lp { p: f64 },
}

impl AggregationSpec {
    /// Degree of positive homogeneity.
    pub fn degree(&self) -> u32 {
        match self {
            AggregationSpec::PowerOfSum { q } => *q,
            _ => 1,
        }
    }

    /// Per-entry value that makes an all-equal row of `s` entries aggregate to
    /// exactly 1. Generators use it to put dense streams on the unit scale.
    pub fn unit_share(&self, s: usize) -> f64 {
        match self {
            AggregationSpec::Sum | AggregationSpec::PowerOfSum { .. } => 1.0 / s as f64,
            AggregationSpec::Max => 1.0,
            AggregationSpec::Lp { p } => (s as f64).powf(-1.0 / p),
        }
    }

    pub fn check(&self) -> Result<()> {
        match *self {
            AggregationSpec::PowerOfSum { q } if q < 1 => {
                Err(Error::BadExponent(format!("power q={q} must be >= 1")))
            }
            AggregationSpec::Lp { p } if !(p > 1.0) || !p.is_finite() => {
                Err(Error::BadExponent(format!("l_p exponent p={p} must be > 1")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for AggregationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggregationSpec::Sum => f.write_str("sum"),
            AggregationSpec::PowerOfSum { q } => write!(f, "pow:{q}"),
            AggregationSpec::Max => f.write_str("max"),
            AggregationSpec::Lp { p } => write!(f, "lp:{p}"),
        }
    }
}

impl FromStr for AggregationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let spec = match s.split_once(':') {
            None if s == "sum" => AggregationSpec::Sum,
            None if s == "max" => AggregationSpec::Max,
            Some(("pow", q)) => AggregationSpec::PowerOfSum {
                q: q.parse().map_err(|_| Error::Invalid(format!("bad power in {s:?}")))?,
            },
            Some(("lp", p)) => AggregationSpec::Lp {
                p: p.parse().map_err(|_| Error::Invalid(format!("bad exponent in {s:?}")))?,
            },
            _ => {
                return Err(Error::Invalid(format!(
                    "unknown aggregation {s:?} (expected sum, pow:q, max or lp:p)"
                )))
            }
        };
        spec.check()?;
        Ok(spec)
    }
}

/// Aggregate one expert's row of local costs.
pub fn aggregate(spec: &AggregationSpec, row: &[f64]) -> Result<f64> {
    if let Some((index, &value)) = row.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeCost { index, value });
    }
    Ok(aggregate_unchecked(spec, row))
}

/// `aggregate` for rows already known to be non-negative.
pub fn aggregate_unchecked(spec: &AggregationSpec, row: &[f64]) -> f64 {
    match *spec {
        AggregationSpec::Sum => row.iter().sum(),
        AggregationSpec::PowerOfSum { q } => row.iter().sum::<f64>().powi(q as i32),
        AggregationSpec::Max => row.iter().copied().fold(0.0, f64::max),
        AggregationSpec::Lp { p } => {
            // Scale by the max so large p neither overflows nor underflows.
            let m = row.iter().copied().fold(0.0, f64::max);
            if m == 0.0 {
                return 0.0;
            }
            let s: f64 = row.iter().map(|v| (v / m).powf(p)).sum();
            m * s.powf(1.0 / p)
        }
    }
}

/// `E[E^{-1/p}]` for `E ~ Exponential(1)`, which equals `Γ(1 - 1/p)`.
pub fn gamma_norm(p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return Err(Error::BadExponent(format!(
            "gamma normalisation needs p > 1, got {p}"
        )));
    }
    Ok(statrs::function::gamma::gamma(1.0 - 1.0 / p))
}

/// Probability that a fixed expert lands in a budget of `b_e` uniform draws
/// with replacement from `n` experts.
pub fn inclusion_probability(n: usize, b_e: usize) -> f64 {
    1.0 - (1.0 - 1.0 / n as f64).powi(b_e as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn worked_values() {
        assert!(close(aggregate(&AggregationSpec::Sum, &[0.2, 0.3, 0.1]).unwrap(), 0.6, 1e-12));
        assert_eq!(aggregate(&AggregationSpec::Max, &[0.1, 0.7, 0.3]).unwrap(), 0.7);
        assert!(close(aggregate(&AggregationSpec::Lp { p: 2.0 }, &[0.3, 0.4]).unwrap(), 0.5, 1e-12));
        assert!(close(
            aggregate(&AggregationSpec::PowerOfSum { q: 2 }, &[0.1, 0.2]).unwrap(),
            0.09,
            1e-12
        ));
    }

    #[test]
    fn zero_row_is_zero_everywhere() {
        for spec in [
            AggregationSpec::Sum,
            AggregationSpec::PowerOfSum { q: 3 },
            AggregationSpec::Max,
            AggregationSpec::Lp { p: 1.5 },
        ] {
            assert_eq!(aggregate(&spec, &[0.0; 4]).unwrap(), 0.0);
        }
    }

    #[test]
    fn negative_entry_rejected() {
        let err = aggregate(&AggregationSpec::Sum, &[0.1, -0.2]).unwrap_err();
        assert!(matches!(err, Error::NegativeCost { index: 1, .. }));
    }

    #[test]
    fn gamma_norm_constants() {
        assert!(close(gamma_norm(2.0).unwrap(), std::f64::consts::PI.sqrt(), 1e-10));
        assert!(close(gamma_norm(4.0 / 3.0).unwrap(), 3.625_609_908_221_908, 1e-9));
        let g = gamma_norm(1e6).unwrap();
        assert!(close(g, 1.0 + 0.577_215_664_9e-6, 1e-9), "{g}");
    }

    #[test]
    fn gamma_norm_rejects_p_at_most_one() {
        assert!(matches!(gamma_norm(1.0), Err(Error::BadExponent(_))));
        assert!(matches!(gamma_norm(0.5), Err(Error::BadExponent(_))));
    }

    #[test]
    fn inclusion_values() {
        assert!(close(inclusion_probability(100, 1), 0.01, 1e-12));
        assert_eq!(inclusion_probability(1, 1), 1.0);
        assert!(close(inclusion_probability(2, 2), 0.75, 1e-12));
    }

    #[test]
    fn parse_and_display() {
        for text in ["sum", "max", "pow:2", "lp:3"] {
            let spec: AggregationSpec = text.parse().unwrap();
            assert_eq!(spec.to_string(), text);
        }
        assert!("lp:1".parse::<AggregationSpec>().is_err());
        assert!("pow:0".parse::<AggregationSpec>().is_err());
        assert!("min".parse::<AggregationSpec>().is_err());
    }

    fn specs() -> impl Strategy<Value = AggregationSpec> {
        prop_oneof![
            Just(AggregationSpec::Sum),
            (1u32..4).prop_map(|q| AggregationSpec::PowerOfSum { q }),
            Just(AggregationSpec::Max),
            (1.01f64..8.0).prop_map(|p| AggregationSpec::Lp { p }),
        ]
    }

    proptest! {
        #[test]
        fn monotone_in_every_entry(
            spec in specs(),
            row in prop::collection::vec(0.0f64..1.0, 1..12),
            idx in any::<prop::sample::Index>(),
            bump in 0.0f64..1.0,
        ) {
            let base = aggregate(&spec, &row).unwrap();
            let mut up = row.clone();
            let k = idx.index(up.len());
            up[k] += bump;
            let bumped = aggregate(&spec, &up).unwrap();
            prop_assert!(bumped >= base - 1e-12 * base.max(1.0));
        }

        #[test]
        fn homogeneous(
            spec in specs(),
            row in prop::collection::vec(0.0f64..1.0, 1..12),
            c in 0.0f64..5.0,
        ) {
            let scaled: Vec<f64> = row.iter().map(|v| c * v).collect();
            let lhs = aggregate(&spec, &scaled).unwrap();
            let rhs = c.powi(spec.degree() as i32) * aggregate(&spec, &row).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
        }

        #[test]
        fn large_p_approaches_max(row in prop::collection::vec(0.0f64..1.0, 1..20)) {
            let s = row.len() as f64;
            let max = aggregate(&AggregationSpec::Max, &row).unwrap();
            let lp = aggregate(&AggregationSpec::Lp { p: 64.0 }, &row).unwrap();
            prop_assert!(lp >= max - 1e-12);
            prop_assert!(lp - max <= (s.powf(1.0 / 64.0) - 1.0) * max + 1e-12);
        }
    }
}
