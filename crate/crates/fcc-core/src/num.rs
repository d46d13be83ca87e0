//! Exact scalar arithmetic: arbitrary-precision rationals plus a `+INF` sentinel.
//!
//! The sentinel is not a float infinity. Its arithmetic is spelled out here,
//! including the convention `0 * INF = 0` used everywhere convex weights meet
//! possibly infinite values.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Exact rational scalar used throughout the crate.
pub type Ratio = BigRational;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NumberError {
    #[error("empty numeric literal")]
    Empty,
    #[error("invalid numeric literal `{0}`")]
    Invalid(String),
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
    #[error("negative value `{0}` where a nonnegative one is required")]
    Negative(String),
}

/// `2^exp` as an exact rational; `exp` may be negative.
pub fn pow2(exp: i64) -> Ratio {
    if exp >= 0 {
        Ratio::from_integer(BigInt::one() << exp as usize)
    } else {
        Ratio::new(BigInt::one(), BigInt::one() << (-exp) as usize)
    }
}

pub fn ratio(numer: i64, denom: i64) -> Ratio {
    Ratio::new(BigInt::from(numer), BigInt::from(denom))
}

pub fn int(n: i64) -> Ratio {
    Ratio::from_integer(BigInt::from(n))
}

pub fn from_u128(n: u128) -> Ratio {
    Ratio::from_integer(BigInt::from(n))
}

pub fn to_f64(q: &Ratio) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

pub fn is_positive(q: &Ratio) -> bool {
    Signed::is_positive(q)
}

/// Canonical `p/q` rendering with the fraction fully reduced and `q >= 1`.
pub fn format_ratio(q: &Ratio) -> String {
    format!("{}/{}", q.numer(), q.denom())
}

/// Accepts `p/q` or a bare integer `p`. Emission always uses [`format_ratio`],
/// so serialized values round-trip bit-exactly.
pub fn parse_ratio(text: &str) -> Result<Ratio, NumberError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(NumberError::Empty);
    }
    let (numer, denom) = match text.split_once('/') {
        Some((n, d)) => (n, Some(d)),
        None => (text, None),
    };
    let numer: BigInt = numer
        .parse()
        .map_err(|_| NumberError::Invalid(text.to_string()))?;
    let denom: BigInt = match denom {
        Some(d) => d
            .parse()
            .map_err(|_| NumberError::Invalid(text.to_string()))?,
        None => BigInt::one(),
    };
    if denom.is_zero() {
        return Err(NumberError::ZeroDenominator(text.to_string()));
    }
    Ok(Ratio::new(numer, denom))
}

pub fn parse_nonnegative_ratio(text: &str) -> Result<Ratio, NumberError> {
    let q = parse_ratio(text)?;
    if q.is_negative() {
        return Err(NumberError::Negative(text.to_string()));
    }
    Ok(q)
}

/// A nonnegative exact rational extended with `+INF`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExtRational {
    Finite(Ratio),
    Infinite,
}

impl ExtRational {
    pub fn zero() -> Self {
        ExtRational::Finite(Ratio::zero())
    }

    pub fn finite(q: Ratio) -> Self {
        ExtRational::Finite(q)
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, ExtRational::Infinite)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ExtRational::Finite(q) if q.is_zero())
    }

    pub fn finite_ref(&self) -> Option<&Ratio> {
        match self {
            ExtRational::Finite(q) => Some(q),
            ExtRational::Infinite => None,
        }
    }

    pub fn add(&self, other: &ExtRational) -> ExtRational {
        match (self, other) {
            (ExtRational::Finite(a), ExtRational::Finite(b)) => ExtRational::Finite(a + b),
            _ => ExtRational::Infinite,
        }
    }

    /// Pointwise product with the convention `0 * INF = 0`.
    pub fn mul(&self, other: &ExtRational) -> ExtRational {
        match (self, other) {
            (ExtRational::Finite(a), ExtRational::Finite(b)) => ExtRational::Finite(a * b),
            (ExtRational::Finite(a), ExtRational::Infinite)
            | (ExtRational::Infinite, ExtRational::Finite(a)) => {
                if a.is_zero() {
                    ExtRational::zero()
                } else {
                    ExtRational::Infinite
                }
            }
            (ExtRational::Infinite, ExtRational::Infinite) => ExtRational::Infinite,
        }
    }

    pub fn scale(&self, factor: &Ratio) -> ExtRational {
        self.mul(&ExtRational::Finite(factor.clone()))
    }

    /// `|a - b|`; `None` when both operands are infinite.
    pub fn abs_diff(&self, other: &ExtRational) -> Option<ExtRational> {
        match (self, other) {
            (ExtRational::Finite(a), ExtRational::Finite(b)) => {
                Some(ExtRational::Finite((a - b).abs()))
            }
            (ExtRational::Infinite, ExtRational::Infinite) => None,
            _ => Some(ExtRational::Infinite),
        }
    }

    pub fn min_with(&self, other: &ExtRational) -> ExtRational {
        if self <= other {
            self.clone()
        } else {
            other.clone()
        }
    }

    pub fn max_with(&self, other: &ExtRational) -> ExtRational {
        if self >= other {
            self.clone()
        } else {
            other.clone()
        }
    }

    /// `exp(-x)` in floating point, with `exp(-INF) = 0`.
    pub fn exp_neg(&self) -> f64 {
        match self {
            ExtRational::Finite(q) => (-to_f64(q)).exp(),
            ExtRational::Infinite => 0.0,
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            ExtRational::Finite(q) => to_f64(q),
            ExtRational::Infinite => f64::INFINITY,
        }
    }
}

impl PartialOrd for ExtRational {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExtRational {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (ExtRational::Finite(a), ExtRational::Finite(b)) => a.cmp(b),
            (ExtRational::Finite(_), ExtRational::Infinite) => Ordering::Less,
            (ExtRational::Infinite, ExtRational::Finite(_)) => Ordering::Greater,
            (ExtRational::Infinite, ExtRational::Infinite) => Ordering::Equal,
        }
    }
}

impl From<Ratio> for ExtRational {
    fn from(q: Ratio) -> Self {
        ExtRational::Finite(q)
    }
}

impl fmt::Display for ExtRational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtRational::Finite(q) => write!(f, "{}", format_ratio(q)),
            ExtRational::Infinite => write!(f, "INF"),
        }
    }
}

pub fn parse_ext(text: &str) -> Result<ExtRational, NumberError> {
    if text.trim() == "INF" {
        Ok(ExtRational::Infinite)
    } else {
        Ok(ExtRational::Finite(parse_ratio(text)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pow2_both_signs() {
        assert_eq!(pow2(3), int(8));
        assert_eq!(pow2(0), int(1));
        assert_eq!(pow2(-2), ratio(1, 4));
    }

    #[test]
    fn parse_and_format_round_trip() {
        for s in ["1/2", "0/1", "7/3", "12/1"] {
            let q = parse_ratio(s).unwrap();
            assert_eq!(format_ratio(&q), s);
        }
        assert_eq!(parse_ratio("5").unwrap(), int(5));
        assert!(parse_ratio("1/0").is_err());
        assert!(parse_ratio("").is_err());
        assert!(parse_ratio("x").is_err());
    }

    #[test]
    fn zero_times_infinity_is_zero() {
        let zero = ExtRational::zero();
        let inf = ExtRational::Infinite;
        assert_eq!(zero.mul(&inf), ExtRational::zero());
        assert_eq!(inf.mul(&zero), ExtRational::zero());
        assert_eq!(ExtRational::finite(int(2)).mul(&inf), ExtRational::Infinite);
    }

    #[test]
    fn infinity_ordering_and_exp() {
        let inf = ExtRational::Infinite;
        let two = ExtRational::finite(int(2));
        assert!(inf > two);
        assert_eq!(inf.exp_neg(), 0.0);
        assert!((two.exp_neg() - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn abs_diff_handles_sentinels() {
        let inf = ExtRational::Infinite;
        let one = ExtRational::finite(int(1));
        assert_eq!(inf.abs_diff(&one), Some(ExtRational::Infinite));
        assert_eq!(inf.abs_diff(&inf), None);
        assert_eq!(
            one.abs_diff(&ExtRational::finite(int(3))),
            Some(ExtRational::finite(int(2)))
        );
    }
}
