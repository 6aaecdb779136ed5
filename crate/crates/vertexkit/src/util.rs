//! Shared arithmetic helpers: exact rationals and generalized binomials.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, Zero};

/// The ground field: arbitrary-precision rationals.
pub type Rat = BigRational;

/// Rational from an integer.
pub fn rat(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Rational from numerator/denominator.
pub fn ratio(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

/// Generalized binomial coefficient `C(i, j) = i(i-1)...(i-j+1)/j!` for any
/// integer `i` and non-negative `j`.  For negative `i` this agrees with the
/// convention `C(i,j) = (-1)^j C(j-i-1, j)`.
pub fn binom(i: i64, j: i64) -> Rat {
    assert!(j >= 0, "binomial lower index must be non-negative");
    let mut num = Rat::one();
    for k in 0..j {
        num *= rat(i - k);
        num /= rat(k + 1);
    }
    num
}

/// Non-negative integer factorial as a rational.
pub fn factorial(n: i64) -> Rat {
    assert!(n >= 0);
    let mut f = Rat::one();
    for k in 2..=n {
        f *= rat(k);
    }
    f
}

/// Render a rational the way all text formats in this crate expect:
/// `p` or `p/q`, with a leading `-` when negative.
pub fn fmt_rat(r: &Rat) -> String {
    if r.denom().is_one() {
        format!("{}", r.numer())
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parse a rational written as `p` or `p/q`.
pub fn parse_rat(s: &str) -> Option<Rat> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        Some(Rat::new(n, d))
    } else {
        let n: BigInt = s.parse().ok()?;
        Some(Rat::from_integer(n))
    }
}

/// `(-1)^k` as a rational, for any integer `k`.
pub fn sign(k: i64) -> Rat {
    if k.rem_euclid(2) == 0 {
        Rat::one()
    } else {
        -Rat::one()
    }
}

/// True when the rational is negative (used by the term printers).
pub fn is_negative(r: &Rat) -> bool {
    r.is_negative()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binom_nonnegative() {
        assert_eq!(binom(5, 2), rat(10));
        assert_eq!(binom(3, 0), rat(1));
        assert_eq!(binom(2, 5), rat(0));
    }

    #[test]
    fn binom_negative_convention() {
        // C(i,j) = (-1)^j C(j-i-1, j) for negative upper index.
        for i in -6..0 {
            for j in 0..6 {
                let lhs = binom(i, j);
                let rhs = sign(j) * binom(j - i - 1, j);
                assert_eq!(lhs, rhs, "i={i} j={j}");
            }
        }
        assert_eq!(binom(-1, 1), rat(-1));
    }

    #[test]
    fn rational_round_trip() {
        for s in ["3/2", "-7", "0", "22/7"] {
            let r = parse_rat(s).unwrap();
            assert_eq!(fmt_rat(&r), s);
        }
    }
}
