//! Bolthausen-Sznitman merger rates as exact rationals.
//!
//! When the coalescent has `b` blocks, each particular set of `k` blocks
//! merges at rate
//!
//! ```text
//! lambda_{b,k} = integral_0^1 y^{k-2} (1-y)^{b-k} dy
//!              = Beta(k-1, b-k+1) = (k-2)! (b-k)! / (b-1)!
//! ```
//!
//! The factorial form is exact; rates are kept rational and converted to
//! floating point only at sampling time, so distribution comparisons carry
//! no rate rounding.

use crate::error::{Error, Result};
use num_rational::Ratio;

/// Exact rate arithmetic. i128 comfortably covers the factorial products for
/// the block counts this crate works with (`b` up to ~30).
pub type Rational = Ratio<i128>;

fn factorial(k: i128) -> i128 {
    (2..=k).product::<i128>().max(1)
}

fn binomial(b: i128, k: i128) -> i128 {
    // Multiplicative form keeps intermediates small.
    let k = k.min(b - k);
    let mut num: i128 = 1;
    let mut den: i128 = 1;
    for i in 0..k {
        num *= b - i;
        den *= i + 1;
    }
    num / den
}

/// Rate at which a particular set of `k` of the current `b` blocks merges.
pub fn merger_rate(b: u32, k: u32) -> Result<Rational> {
    if !(2 <= k && k <= b) {
        return Err(Error::Argument(format!(
            "merger rate needs 2 <= k <= b, got b={b}, k={k}"
        )));
    }
    let (b, k) = (b as i128, k as i128);
    Ok(Rational::new(factorial(k - 2) * factorial(b - k), factorial(b - 1)))
}

/// Total rate of leaving a state with `b` blocks:
/// `sum_{k=2}^{b} C(b,k) lambda_{b,k}`.
pub fn total_merger_rate(b: u32) -> Result<Rational> {
    if b < 2 {
        return Err(Error::Argument(format!("need b >= 2, got {b}")));
    }
    let mut total = Rational::new(0, 1);
    for k in 2..=b {
        total += Rational::from_integer(binomial(b as i128, k as i128)) * merger_rate(b, k)?;
    }
    Ok(total)
}

/// Probability weights over the merger size `k` given that a merger occurs
/// from `b` blocks: `C(b,k) lambda_{b,k} / total`. Returned as f64 for
/// sampling; index 0 corresponds to `k = 2`.
pub fn merger_size_weights(b: u32) -> Result<Vec<f64>> {
    let total = total_merger_rate(b)?;
    (2..=b)
        .map(|k| {
            let w = Rational::from_integer(binomial(b as i128, k as i128)) * merger_rate(b, k)?
                / total;
            Ok(ratio_to_f64(&w))
        })
        .collect()
}

/// Lossless enough for sampling: numerators and denominators here stay far
/// below 2^53 in reduced form for small b, and the division is correctly
/// rounded.
pub fn ratio_to_f64(r: &Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_values() {
        assert_eq!(merger_rate(2, 2).unwrap(), Rational::new(1, 1));
        assert_eq!(merger_rate(3, 2).unwrap(), Rational::new(1, 2));
        assert_eq!(merger_rate(3, 3).unwrap(), Rational::new(1, 2));
        assert_eq!(merger_rate(4, 3).unwrap(), Rational::new(1, 6));
        assert_eq!(merger_rate(5, 3).unwrap(), Rational::new(1, 12));
    }

    #[test]
    fn domain_checks() {
        assert!(merger_rate(3, 1).is_err());
        assert!(merger_rate(3, 4).is_err());
        assert!(total_merger_rate(1).is_err());
    }

    #[test]
    fn totals() {
        assert_eq!(total_merger_rate(2).unwrap(), Rational::new(1, 1));
        assert_eq!(total_merger_rate(3).unwrap(), Rational::new(2, 1));
        // b - 1 in general: verified against quadrature in the integration
        // suite; here just the summation identity.
        for b in 2..=12u32 {
            assert_eq!(total_merger_rate(b).unwrap(), Rational::new(b as i128 - 1, 1));
        }
    }

    #[test]
    fn size_weights_sum_to_one() {
        for b in 2..=12u32 {
            let w = merger_size_weights(b).unwrap();
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
