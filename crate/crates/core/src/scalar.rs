//! Numeric abstraction shared by the raking engine and the covariance
//! recursion.
//!
//! Everything that is pure field arithmetic (ratio steps, block totals, the
//! bridge recursion, the two-marginal closed forms) is written against
//! [`Scalar`], so it runs on `f32`, `f64` or exact [`BigRational`]s. Random
//! number generation, eigen-decompositions and Monte Carlo stay in `f64`.

use std::fmt::Debug;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};

pub trait Scalar:
    Clone + Debug + PartialOrd + Num + Signed + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Parses a plain or scientific decimal literal. Rationals parse exactly.
    fn from_decimal(s: &str) -> Option<Self>;

    /// `num / den`, exact for rationals.
    fn from_ratio(num: u64, den: u64) -> Self;

    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite value")
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn within(&self, other: &Self, tol: f64) -> bool {
        (self.clone() - other.clone()).abs() <= Self::from_f64_lossy(tol)
    }
}

macro_rules! float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn from_decimal(s: &str) -> Option<Self> {
                s.trim().parse().ok().filter(|x: &$t| x.is_finite())
            }

            fn from_ratio(num: u64, den: u64) -> Self {
                num as $t / den as $t
            }
        }
    };
}

float_scalar!(f32);
float_scalar!(f64);

impl Scalar for BigRational {
    fn from_decimal(s: &str) -> Option<Self> {
        let s = s.trim();
        let (mantissa, exponent) = match s.find(['e', 'E']) {
            Some(pos) => (&s[..pos], s[pos + 1..].parse::<i32>().ok()?),
            None => (s, 0),
        };
        let (negative, digits) = match mantissa.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
        };
        let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
            return None;
        }
        let numer = BigInt::from_str(&format!("0{int_part}{frac_part}")).ok()?;
        let scale = exponent - frac_part.len() as i32;
        let ten = BigInt::from(10u8);
        let mut value = BigRational::from_integer(numer);
        if scale >= 0 {
            value *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
        } else {
            value /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
        }
        Some(if negative { -value } else { value })
    }

    fn from_ratio(num: u64, den: u64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn from_f64_lossy(x: f64) -> Self {
        BigRational::from_float(x).expect("finite value")
    }
}

/// Sum of a slice.
pub fn sum<T: Scalar>(xs: &[T]) -> T {
    xs.iter().cloned().fold(T::zero(), |acc, x| acc + x)
}

/// Largest absolute value of a slice (zero when empty).
pub fn max_abs<T: Scalar>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |acc, x| {
        let a = x.abs();
        if a > acc {
            a
        } else {
            acc
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_decimal_parsing_is_exact() {
        let x = BigRational::from_decimal("0.15").unwrap();
        assert_eq!(x, BigRational::new(BigInt::from(3), BigInt::from(20)));
        let y = BigRational::from_decimal("-1.5e-2").unwrap();
        assert_eq!(y, BigRational::new(BigInt::from(-3), BigInt::from(200)));
        assert_eq!(BigRational::from_decimal("2").unwrap(), BigRational::from_integer(2.into()));
        assert!(BigRational::from_decimal("abc").is_none());
        assert!(BigRational::from_decimal(".").is_none());
    }

    #[test]
    fn float_parsing_rejects_non_finite() {
        assert_eq!(f64::from_decimal("0.953"), Some(0.953));
        assert!(f64::from_decimal("inf").is_none());
        assert!(f64::from_decimal("x").is_none());
    }

    #[test]
    fn from_ratio_matches_division() {
        assert_eq!(f64::from_ratio(3, 10), 0.3);
        assert_eq!(
            BigRational::from_ratio(3, 10),
            BigRational::new(BigInt::from(3), BigInt::from(10))
        );
    }
}
