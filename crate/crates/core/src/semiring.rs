//! Tempered log-sum-exp and its max-plus limit.
//!
//! Every algorithm in this crate is written once against [`Temperature`]:
//! a finite inverse temperature selects `x ⊕ y = (1/β) log(e^{βx} + e^{βy})`,
//! the infinite one selects `max{x, y}`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A log-domain potential or message value: a real number or `-inf`.
///
/// `+inf` and NaN are never produced by the operations of this module on
/// valid inputs.
pub type ExtReal = f64;

/// Inverse temperature `β ∈ (0, ∞]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Temperature {
    /// Finite `β > 0`; the log-sum-exp semiring.
    Finite(f64),
    /// `β = ∞`; the max-sum semiring.
    Infinite,
}

impl Temperature {
    pub fn finite(beta: f64) -> Result<Self> {
        if beta.is_finite() && beta > 0.0 {
            Ok(Temperature::Finite(beta))
        } else {
            Err(Error::Usage(format!(
                "inverse temperature must be finite and > 0, got {beta}"
            )))
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Temperature::Infinite)
    }

    /// `x ⊕ y` under this temperature.
    #[inline]
    pub fn combine(self, x: ExtReal, y: ExtReal) -> ExtReal {
        combine(self, x, y)
    }

    /// `⊕` over an iterator; `-inf` for an empty iterator.
    #[inline]
    pub fn reduce<I>(self, values: I) -> ExtReal
    where
        I: IntoIterator<Item = ExtReal>,
        I::IntoIter: Clone,
    {
        reduce_unchecked(self, values)
    }

    /// `⊕` over a slice; `-inf` for an empty slice.
    #[inline]
    pub fn reduce_slice(self, values: &[ExtReal]) -> ExtReal {
        reduce_unchecked(self, values.iter().copied())
    }
}

impl fmt::Display for Temperature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Temperature::Finite(b) => write!(f, "{b}"),
            Temperature::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Temperature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "Inf" | "infinity" | "+inf" => Ok(Temperature::Infinite),
            other => {
                let beta: f64 = other
                    .parse()
                    .map_err(|_| Error::Usage(format!("invalid inverse temperature {other:?}")))?;
                Temperature::finite(beta)
            }
        }
    }
}

/// `x ⊕_β y`, evaluated as `m + (1/β) log(1 + e^{β(min - m)})` with `m` the max.
#[inline]
pub fn combine(t: Temperature, x: ExtReal, y: ExtReal) -> ExtReal {
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    match t {
        Temperature::Infinite => hi,
        Temperature::Finite(beta) => {
            if hi == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            hi + (beta * (lo - hi)).exp().ln_1p() / beta
        }
    }
}

/// `⊕` over a non-empty sequence, using one max-shifted summation pass.
pub fn combine_reduce(t: Temperature, values: &[ExtReal]) -> Result<ExtReal> {
    if values.is_empty() {
        return Err(Error::Usage("combine_reduce of an empty sequence".into()));
    }
    Ok(reduce_unchecked(t, values.iter().copied()))
}

#[inline]
fn reduce_unchecked<I>(t: Temperature, values: I) -> ExtReal
where
    I: IntoIterator<Item = ExtReal>,
    I::IntoIter: Clone,
{
    let iter = values.into_iter();
    let m = iter.clone().fold(f64::NEG_INFINITY, f64::max);
    match t {
        Temperature::Infinite => m,
        Temperature::Finite(beta) => {
            if m == f64::NEG_INFINITY {
                return m;
            }
            let s: f64 = iter.map(|x| (beta * (x - m)).exp()).sum();
            m + s.ln() / beta
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const NEG_INF: f64 = f64::NEG_INFINITY;

    #[test]
    fn combine_examples() {
        let one = Temperature::finite(1.0).unwrap();
        assert_abs_diff_eq!(combine(one, 0.0, 0.0), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(combine(Temperature::Infinite, 3.0, 5.0), 5.0);
        for x in [-3.5, 0.0, 1e6, -1e-300] {
            assert_eq!(combine(one, x, NEG_INF), x);
            assert_eq!(combine(one, NEG_INF, x), x);
        }
        assert_eq!(combine(one, NEG_INF, NEG_INF), NEG_INF);
        assert_eq!(combine(Temperature::Infinite, NEG_INF, NEG_INF), NEG_INF);
    }

    #[test]
    fn reduce_examples() {
        let one = Temperature::finite(1.0).unwrap();
        assert_abs_diff_eq!(
            combine_reduce(one, &[0.0; 4]).unwrap(),
            4f64.ln(),
            epsilon = 1e-15
        );
        assert_eq!(
            combine_reduce(Temperature::Infinite, &[-1.0, 2.0, 0.0]).unwrap(),
            2.0
        );
        let ten = Temperature::finite(10.0).unwrap();
        assert_abs_diff_eq!(
            combine_reduce(ten, &[0.0, 0.0]).unwrap(),
            2f64.ln() / 10.0,
            epsilon = 1e-15
        );
        assert_eq!(combine_reduce(one, &[NEG_INF, NEG_INF]).unwrap(), NEG_INF);
        assert!(matches!(combine_reduce(one, &[]), Err(Error::Usage(_))));
    }

    #[test]
    fn large_magnitudes_do_not_overflow() {
        let t = Temperature::finite(1000.0).unwrap();
        let v = combine(t, 800.0, 800.0);
        assert!(v.is_finite());
        assert_abs_diff_eq!(v, 800.0 + 2f64.ln() / 1000.0, epsilon = 1e-12);
        let r = combine_reduce(t, &[-900.0, 900.0, 899.0]).unwrap();
        assert!(r.is_finite() && r >= 900.0);
    }

    #[test]
    fn parse_temperature() {
        assert_eq!("inf".parse::<Temperature>().unwrap(), Temperature::Infinite);
        assert_eq!(
            "2.5".parse::<Temperature>().unwrap(),
            Temperature::Finite(2.5)
        );
        assert!("0".parse::<Temperature>().is_err());
        assert!("-1".parse::<Temperature>().is_err());
        assert!("nan".parse::<Temperature>().is_err());
        assert!("abc".parse::<Temperature>().is_err());
    }

    fn beta() -> impl Strategy<Value = f64> {
        prop_oneof![Just(1.0), Just(10.0), Just(100.0), 0.05f64..50.0]
    }

    proptest! {
        #[test]
        fn bounded_by_max_plus_log2_over_beta(x in -50.0f64..50.0, y in -50.0f64..50.0, b in beta()) {
            let c = combine(Temperature::Finite(b), x, y);
            let m = x.max(y);
            prop_assert!(c >= m);
            prop_assert!(c <= m + 2f64.ln() / b + 1e-12);
        }

        #[test]
        fn commutative_and_associative(x in -20.0f64..20.0, y in -20.0f64..20.0, z in -20.0f64..20.0, b in beta()) {
            let t = Temperature::Finite(b);
            prop_assert!((combine(t, x, y) - combine(t, y, x)).abs() <= 1e-10);
            let l = combine(t, combine(t, x, y), z);
            let r = combine(t, x, combine(t, y, z));
            prop_assert!((l - r).abs() <= 1e-10);
        }

        #[test]
        fn addition_distributes(x in -20.0f64..20.0, y in -20.0f64..20.0, c in -20.0f64..20.0, b in beta()) {
            let t = Temperature::Finite(b);
            prop_assert!((combine(t, x + c, y + c) - (combine(t, x, y) + c)).abs() <= 1e-12);
        }

        #[test]
        fn reduce_matches_sequential_fold(values in prop::collection::vec(-30.0f64..30.0, 1..=64), b in beta()) {
            let t = Temperature::Finite(b);
            let folded = values[1..].iter().fold(values[0], |acc, &v| combine(t, acc, v));
            let reduced = combine_reduce(t, &values).unwrap();
            prop_assert!((folded - reduced).abs() <= 1e-10);
            let max = combine_reduce(Temperature::Infinite, &values).unwrap();
            prop_assert_eq!(max, values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
    }
}
