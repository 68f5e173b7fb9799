//! Family-size tail of early mutations.
//!
//! Immigrants arrive on `(0, xi]` with intensity `phi(t) = s e^{s q t}`
//! where `xi = (log(1/(s q)) + b) / (s q)`, and each founds a supercritical
//! family (birth `1 + s q`, death 1) evolving until
//! `tau' = (3/(s q)) log(1/(s q))`. The total size is compared against
//! thresholds `x e^{s q tau'}`; the exceedance probability is close to
//! `1/(q x)`, the structural match with a y-merger tail.
//!
//! Families are drawn from the exact single-ancestor transition law (the
//! event-driven growth of a family to `(s q)^{-3}` individuals across
//! millions of replicates is out of computational reach; the transition law
//! is exact and is cross-checked against the event-driven simulator in the
//! module tests).

use super::{bd_transition_sample, ImmigrationProfile};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

/// One threshold's exceedance estimate.
#[derive(Debug, Clone, Copy)]
pub struct TailEstimate {
    pub x: f64,
    pub frequency: f64,
    pub std_error: f64,
    /// `1 / (q x)`.
    pub reference: f64,
    pub exceed_count: u64,
}

/// Paired check that doubling `x` halves the exceedance frequency:
/// per-replicate statistic `1{X > x S} - 2 * 1{X > 2x S}` has mean ~ 0.
#[derive(Debug, Clone, Copy)]
pub struct HalvingCheck {
    pub x_low: f64,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone)]
pub struct FamilyTailReport {
    pub estimates: Vec<TailEstimate>,
    pub halving: Vec<HalvingCheck>,
    pub reps: u64,
    /// `e^{s q tau'} = (s q)^{-3}`, the threshold scale.
    pub scale: f64,
}

/// Estimate the family-size tail at several thresholds, sharing replicates
/// so that doubling checks are paired. `xs` must be ascending.
pub fn family_tail_curve(
    q: f64,
    s: f64,
    b: f64,
    xs: &[f64],
    reps: u64,
    rng: &mut StreamRng,
) -> Result<FamilyTailReport> {
    let sq = s * q;
    if !(sq > 0.0 && sq < 1.0) {
        return Err(Error::Argument(format!("need 0 < s*q < 1, got {sq}")));
    }
    if xs.windows(2).any(|w| w[0] >= w[1]) || xs.is_empty() {
        return Err(Error::Argument("thresholds must be ascending and non-empty".into()));
    }
    let xi = ((1.0 / sq).ln() + b) / sq;
    let tau_prime = 3.0 / sq * (1.0 / sq).ln();
    if xi >= tau_prime {
        return Err(Error::Argument(
            "early window reaches past the evaluation time; lower b or s*q".into(),
        ));
    }
    let scale = (sq * tau_prime).exp();
    let thresholds: Vec<f64> = xs.iter().map(|&x| x * scale).collect();
    let profile = ImmigrationProfile { amp: s, growth: sq, cutoff: xi };
    let total_mass = profile.integral_to(xi);
    let poisson = Poisson::new(total_mass).map_err(|e| Error::Internal(format!("poisson: {e}")))?;
    let (lambda, nu) = (1.0 + sq, 1.0);

    let mut exceed = vec![0u64; xs.len()];
    // paired halving statistics for consecutive doubled thresholds
    let pairs: Vec<usize> = (0..xs.len().saturating_sub(1))
        .filter(|&k| (xs[k + 1] / xs[k] - 2.0).abs() < 1e-9)
        .collect();
    let mut d_sum = vec![0.0f64; pairs.len()];
    let mut d_sum2 = vec![0.0f64; pairs.len()];

    for _ in 0..reps {
        let arrivals = poisson.sample(rng) as u64;
        let mut total: f64 = 0.0;
        for _ in 0..arrivals {
            // arrival time by inversion of the truncated exponential profile
            let u: f64 = rng.random();
            let egu = 1.0 + u * ((sq * xi).exp() - 1.0);
            let arrival = egu.ln() / sq;
            let elapsed = tau_prime - arrival;
            total += bd_transition_sample(lambda, nu, elapsed, rng) as f64;
            if total > thresholds[thresholds.len() - 1] {
                break; // already beyond every threshold
            }
        }
        for (k, &thr) in thresholds.iter().enumerate() {
            if total > thr {
                exceed[k] += 1;
            }
        }
        for (pi, &k) in pairs.iter().enumerate() {
            let d = (total > thresholds[k]) as i64 - 2 * (total > thresholds[k + 1]) as i64;
            d_sum[pi] += d as f64;
            d_sum2[pi] += (d * d) as f64;
        }
    }

    let estimates = xs
        .iter()
        .zip(exceed.iter())
        .map(|(&x, &c)| {
            let f = c as f64 / reps as f64;
            TailEstimate {
                x,
                frequency: f,
                std_error: (f * (1.0 - f) / reps as f64).sqrt(),
                reference: 1.0 / (q * x),
                exceed_count: c,
            }
        })
        .collect();
    let halving = pairs
        .iter()
        .enumerate()
        .map(|(pi, &k)| {
            let mean = d_sum[pi] / reps as f64;
            let var = d_sum2[pi] / reps as f64 - mean * mean;
            HalvingCheck {
                x_low: xs[k],
                mean,
                std_error: (var / reps as f64).sqrt(),
            }
        })
        .collect();

    Ok(FamilyTailReport { estimates, halving, reps, scale })
}

/// Single-threshold convenience wrapper.
pub fn family_tail_estimate(
    q: f64,
    s: f64,
    b: f64,
    x: f64,
    reps: u64,
    rng: &mut StreamRng,
) -> Result<TailEstimate> {
    Ok(family_tail_curve(q, s, b, &[x], reps, rng)?.estimates[0])
}
