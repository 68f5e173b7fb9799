//! Continuous-time birth-death branching processes, with and without
//! time-varying immigration.
//!
//! For a process with per-individual birth rate `lambda > nu` (death rate)
//! started from one individual:
//!
//! * survival: `P(Z(t) > 0) = (lambda - nu) / (lambda - nu e^{-(lambda-nu)t})`,
//!   with limit `1 - q = (lambda - nu)/lambda`;
//! * `W(t) = e^{-(lambda-nu)t} Z(t)` is a mean-one martingale converging a.s.
//!   to a limit `W` that vanishes on extinction and is `Exp(1-q)` given
//!   survival, so `P(W > x) = (1-q) e^{-(1-q)x}`;
//! * the deviation bound
//!   `P(|W(t) - W| > eta) <= 2 e^{-(lambda-nu)t} / (eta^2 (1-q))`.
//!
//! Immigration profiles are exponential with a cutoff,
//! `phi(t) = amp e^{growth t}` for `t <= cutoff`, sampled by exact inversion
//! of the integrated intensity.

mod coupling;
mod tail;

pub use coupling::{
    run_coupling, synthesize_feed, CouplingBands, CouplingPoint, CouplingRun, KappaCause,
    SyntheticFeedConfig,
};
pub use tail::{family_tail_curve, family_tail_estimate, FamilyTailReport, HalvingCheck};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma};

/// Default guard against runaway supercritical runs.
pub const DEFAULT_POP_CAP: u64 = 100_000_000;

/// Exponential immigration profile `amp e^{growth t}` on `[0, cutoff]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImmigrationProfile {
    pub amp: f64,
    pub growth: f64,
    pub cutoff: f64,
}

impl ImmigrationProfile {
    pub fn rate(&self, t: f64) -> f64 {
        if t <= self.cutoff {
            self.amp * (self.growth * t).exp()
        } else {
            0.0
        }
    }

    /// Integrated intensity over `[0, t]`.
    pub fn integral_to(&self, t: f64) -> f64 {
        let t = t.min(self.cutoff);
        if t <= 0.0 {
            0.0
        } else if self.growth == 0.0 {
            self.amp * t
        } else {
            self.amp * ((self.growth * t).exp() - 1.0) / self.growth
        }
    }

    /// First arrival strictly after `t0` given a fresh unit exponential,
    /// by inversion of the integrated intensity; `None` when the remaining
    /// mass is exhausted.
    pub fn next_arrival(&self, t0: f64, unit_exp: f64) -> Option<f64> {
        if t0 >= self.cutoff {
            return None;
        }
        let t = if self.growth == 0.0 {
            t0 + unit_exp / self.amp
        } else {
            let base = (self.growth * t0).exp() + self.growth * unit_exp / self.amp;
            if base <= 0.0 {
                return None;
            }
            base.ln() / self.growth
        };
        (t <= self.cutoff).then_some(t)
    }
}

/// Birth-death process configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BdParams {
    pub birth: f64,
    pub death: f64,
    pub immigration: Option<ImmigrationProfile>,
}

impl BdParams {
    pub fn plain(birth: f64, death: f64) -> Self {
        BdParams { birth, death, immigration: None }
    }

    fn validate(&self) -> Result<()> {
        if self.birth < 0.0 || self.death < 0.0 {
            return Err(Error::Config("rates must be non-negative".into()));
        }
        Ok(())
    }
}

/// `P(Z(t) > 0)` for a supercritical process started from one individual.
pub fn survival_prob(lambda: f64, nu: f64, t: f64) -> Result<f64> {
    if !(lambda > nu) || nu < 0.0 {
        return Err(Error::Argument(format!(
            "survival formula needs lambda > nu >= 0, got lambda={lambda}, nu={nu}"
        )));
    }
    if t < 0.0 {
        return Err(Error::Argument(format!("time must be >= 0, got {t}")));
    }
    let r = lambda - nu;
    Ok(r / (lambda - nu * (-r * t).exp()))
}

/// Limit survival probability `1 - q = (lambda - nu)/lambda`.
pub fn survival_prob_limit(lambda: f64, nu: f64) -> Result<f64> {
    if !(lambda > nu) || nu < 0.0 {
        return Err(Error::Argument(format!(
            "limit formula needs lambda > nu >= 0, got lambda={lambda}, nu={nu}"
        )));
    }
    Ok((lambda - nu) / lambda)
}

/// One realized path: sizes after every event.
#[derive(Debug, Clone)]
pub struct BdPath {
    pub times: Vec<f64>,
    pub sizes: Vec<u64>,
    pub immigrant_arrivals: Vec<f64>,
}

impl BdPath {
    pub fn size_at(&self, t: f64) -> u64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => 0,
            k => self.sizes[k - 1],
        }
    }

    pub fn final_size(&self) -> u64 {
        self.sizes.last().copied().unwrap_or(0)
    }
}

/// Exact event-driven simulation from `initial` individuals to `t_end`,
/// recording the full path. Aborts with a capability error if the size
/// exceeds `cap`.
pub fn simulate_bd(
    params: &BdParams,
    initial: u64,
    t_end: f64,
    cap: u64,
    rng: &mut StreamRng,
) -> Result<BdPath> {
    params.validate()?;
    let mut z = initial;
    let mut t = 0.0;
    let mut path = BdPath {
        times: vec![0.0],
        sizes: vec![z],
        immigrant_arrivals: Vec::new(),
    };
    let ind_rate = params.birth + params.death;
    let p_birth = if ind_rate > 0.0 { params.birth / ind_rate } else { 0.0 };
    loop {
        let next_ind = if z > 0 && ind_rate > 0.0 {
            t + exp_var(rng, z as f64 * ind_rate)
        } else {
            f64::INFINITY
        };
        let next_imm = match &params.immigration {
            Some(profile) => profile
                .next_arrival(t, exp_var(rng, 1.0))
                .unwrap_or(f64::INFINITY),
            None => f64::INFINITY,
        };
        let t_next = next_ind.min(next_imm);
        if t_next > t_end || t_next.is_infinite() {
            break;
        }
        t = t_next;
        if next_imm < next_ind {
            z += 1;
            path.immigrant_arrivals.push(t);
        } else if rng.random::<f64>() < p_birth {
            z += 1;
        } else {
            z -= 1;
        }
        if z > cap {
            return Err(Error::Capability(format!(
                "population exceeded the explosion cap {cap}"
            )));
        }
        path.times.push(t);
        path.sizes.push(z);
    }
    Ok(path)
}

/// Like [`simulate_bd`] but records only the sizes at the given ascending
/// checkpoints (plus the immigrant count); O(1) memory in the event count.
pub fn simulate_bd_checkpoints(
    params: &BdParams,
    initial: u64,
    checkpoints: &[f64],
    cap: u64,
    rng: &mut StreamRng,
) -> Result<(Vec<u64>, u64)> {
    params.validate()?;
    let mut z = initial;
    let mut t = 0.0;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next_cp = 0usize;
    let mut immigrants = 0u64;
    let ind_rate = params.birth + params.death;
    let p_birth = if ind_rate > 0.0 { params.birth / ind_rate } else { 0.0 };
    let t_end = checkpoints.last().copied().unwrap_or(0.0);
    loop {
        let next_ind = if z > 0 && ind_rate > 0.0 {
            t + exp_var(rng, z as f64 * ind_rate)
        } else {
            f64::INFINITY
        };
        let next_imm = match &params.immigration {
            Some(profile) => profile
                .next_arrival(t, exp_var(rng, 1.0))
                .unwrap_or(f64::INFINITY),
            None => f64::INFINITY,
        };
        let t_next = next_ind.min(next_imm);
        while next_cp < checkpoints.len() && checkpoints[next_cp] < t_next {
            out.push(z);
            next_cp += 1;
        }
        if t_next > t_end || t_next.is_infinite() {
            break;
        }
        t = t_next;
        if next_imm < next_ind {
            z += 1;
            immigrants += 1;
        } else if rng.random::<f64>() < p_birth {
            z += 1;
        } else {
            z -= 1;
        }
        if z > cap {
            return Err(Error::Capability(format!(
                "population exceeded the explosion cap {cap}"
            )));
        }
    }
    while next_cp < checkpoints.len() {
        out.push(z);
        next_cp += 1;
    }
    Ok((out, immigrants))
}

#[inline]
fn exp_var(rng: &mut StreamRng, rate: f64) -> f64 {
    -(rng.random::<f64>().max(f64::MIN_POSITIVE)).ln() / rate
}

/// Exact draw from the law of `Z(elapsed)` for a linear birth-death process
/// started from a single individual: extinct with probability `alpha`,
/// otherwise geometric. Used where event-driven growth is computationally
/// out of reach; cross-checked against [`simulate_bd`] in tests.
pub fn bd_transition_sample(lambda: f64, nu: f64, elapsed: f64, rng: &mut StreamRng) -> u64 {
    debug_assert!(lambda != nu, "critical case not needed here");
    let r = lambda - nu;
    let egrow = (r * elapsed).exp();
    // alpha = nu(E-1)/(lambda E - nu); 1 - beta = r/(lambda E - nu)
    let denom = lambda * egrow - nu;
    let alpha = nu * (egrow - 1.0) / denom;
    if rng.random::<f64>() < alpha {
        return 0;
    }
    let one_minus_beta = r / denom;
    // geometric on {1, 2, ...} with success probability 1-beta
    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let ln_beta = (-one_minus_beta).ln_1p();
    if ln_beta == 0.0 {
        return 1;
    }
    1 + (u.ln() / ln_beta).floor() as u64
}

/// Exact draw of the martingale limit `W` given `Z(t) = z`: each of the `z`
/// subtrees contributes an independent copy of `W`, i.e. 0 with probability
/// `q` and `Exp(1-q)` otherwise, discounted by `e^{-(lambda-nu)t}`.
pub fn w_limit_sample_given_size(
    lambda: f64,
    nu: f64,
    t: f64,
    z: u64,
    rng: &mut StreamRng,
) -> Result<f64> {
    let p_surv = survival_prob_limit(lambda, nu)?;
    if z == 0 {
        return Ok(0.0);
    }
    let survivors = Binomial::new(z, p_surv)
        .map_err(|e| Error::Internal(format!("binomial: {e}")))?
        .sample(rng);
    if survivors == 0 {
        return Ok(0.0);
    }
    let total = Gamma::new(survivors as f64, 1.0 / p_surv)
        .map_err(|e| Error::Internal(format!("gamma: {e}")))?
        .sample(rng);
    Ok((-(lambda - nu) * t).exp() * total)
}

/// One deviation-bound check: observed frequency of `|W(t) - W| > eta`
/// against the closed-form bound.
#[derive(Debug, Clone, Copy)]
pub struct DeviationCheck {
    pub t: f64,
    pub eta: f64,
    pub observed_freq: f64,
    pub bound: f64,
}

/// Outcome of the martingale-limit distribution test.
#[derive(Debug, Clone)]
pub struct WLimitReport {
    pub reps: u64,
    pub survivors: u64,
    /// KS distance between the survivor-conditional `W(t_large)` sample and
    /// `Exp(1-q)`.
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    /// Unconditional mean of `W(t_large)` with its standard error; the
    /// martingale property makes the target exactly 1.
    pub mean_w: f64,
    pub mean_w_se: f64,
    pub deviation_checks: Vec<DeviationCheck>,
    pub warning: Option<String>,
}

/// Simulate `W(t) = e^{-(lambda-nu)t} Z(t)`, compare the survivor-conditional
/// law at `t_large` against `Exp(1-q)` by Kolmogorov-Smirnov, and check the
/// deviation bound empirically at the intermediate checkpoints
/// `t_large/4` and `t_large/2` for `eta` in {0.5, 1}.
///
/// `W` itself is drawn exactly from its conditional law given `Z(t_large)`
/// (independent subtree limits), which preserves the joint distribution of
/// the checkpoints and the limit.
pub fn w_limit_test(
    lambda: f64,
    nu: f64,
    t_large: f64,
    reps: u64,
    rng: &mut StreamRng,
) -> Result<WLimitReport> {
    if !(lambda > nu) {
        return Err(Error::Argument("need lambda > nu".into()));
    }
    let r = lambda - nu;
    if t_large < 10.0 / r {
        return Err(Error::Argument(format!(
            "t_large must be at least 10/(lambda-nu) = {}",
            10.0 / r
        )));
    }
    let p_surv = survival_prob_limit(lambda, nu)?;
    let checkpoints = [t_large / 4.0, t_large / 2.0, t_large];
    let etas = [0.5, 1.0];
    let params = BdParams::plain(lambda, nu);

    let mut w_survivors: Vec<f64> = Vec::new();
    let mut sum_w = 0.0;
    let mut sum_w2 = 0.0;
    let mut exceed = [[0u64; 2]; 2]; // [checkpoint][eta]
    for _ in 0..reps {
        let (sizes, _) = simulate_bd_checkpoints(&params, 1, &checkpoints, DEFAULT_POP_CAP, rng)?;
        let z_final = sizes[2];
        let w_final = (-r * t_large).exp() * z_final as f64;
        sum_w += w_final;
        sum_w2 += w_final * w_final;
        if z_final > 0 {
            w_survivors.push(w_final);
        }
        let w_lim = w_limit_sample_given_size(lambda, nu, t_large, z_final, rng)?;
        for (ci, &tc) in checkpoints.iter().take(2).enumerate() {
            let w_c = (-r * tc).exp() * sizes[ci] as f64;
            for (ei, &eta) in etas.iter().enumerate() {
                if (w_c - w_lim).abs() > eta {
                    exceed[ci][ei] += 1;
                }
            }
        }
    }

    let mut deviation_checks = Vec::new();
    for (ci, &tc) in checkpoints.iter().take(2).enumerate() {
        for (ei, &eta) in etas.iter().enumerate() {
            deviation_checks.push(DeviationCheck {
                t: tc,
                eta,
                observed_freq: exceed[ci][ei] as f64 / reps as f64,
                bound: 2.0 * (-r * tc).exp() / (eta * eta * p_surv),
            });
        }
    }

    let n = w_survivors.len();
    let warning = (n < 1000).then(|| format!("only {n} survivors; KS power is low"));
    w_survivors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut d = 0.0f64;
    for (i, &w) in w_survivors.iter().enumerate() {
        let f = 1.0 - (-p_surv * w).exp();
        let hi = (i + 1) as f64 / n as f64 - f;
        let lo = f - i as f64 / n as f64;
        d = d.max(hi).max(lo);
    }
    let ks_p = if n == 0 { 1.0 } else { ks_p_value(n as f64, d) };
    let mean_w = sum_w / reps as f64;
    let var_w = (sum_w2 / reps as f64 - mean_w * mean_w).max(0.0);

    Ok(WLimitReport {
        reps,
        survivors: n as u64,
        ks_statistic: d,
        ks_p_value: ks_p,
        mean_w,
        mean_w_se: (var_w / reps as f64).sqrt(),
        deviation_checks,
        warning,
    })
}

/// Two-sided p-value of the Kolmogorov-Smirnov statistic via the asymptotic
/// Kolmogorov distribution with the usual finite-sample correction.
pub fn ks_p_value(n: f64, d: f64) -> f64 {
    let x = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    kolmogorov_tail(x)
}

fn kolmogorov_tail(x: f64) -> f64 {
    if x < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn survival_formula_values() {
        assert_abs_diff_eq!(survival_prob(2.0, 1.0, 0.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(survival_prob_limit(2.0, 1.0).unwrap(), 0.5, epsilon = 1e-15);
        // lambda=1.1, nu=1, t=10: 0.1/(1.1 - e^{-1})
        let p = survival_prob(1.1, 1.0, 10.0).unwrap();
        assert_abs_diff_eq!(p, 0.1 / (1.1 - (-1.0f64).exp()), epsilon = 1e-12);
        assert!((p - 0.136590).abs() < 1e-6);
        assert!(survival_prob(1.0, 1.0, 1.0).is_err());
        assert!(survival_prob(0.8, 1.0, 1.0).is_err());
    }

    #[test]
    fn survival_matches_simulation() {
        let mut rng = stream(20, 0);
        let (lambda, nu, t) = (1.1, 1.0, 10.0);
        let p = survival_prob(lambda, nu, t).unwrap();
        let reps = 100_000u64;
        let mut alive = 0u64;
        for _ in 0..reps {
            let (sizes, _) = simulate_bd_checkpoints(
                &BdParams::plain(lambda, nu),
                1,
                &[t],
                DEFAULT_POP_CAP,
                &mut rng,
            )
            .unwrap();
            if sizes[0] > 0 {
                alive += 1;
            }
        }
        let freq = alive as f64 / reps as f64;
        let se = (p * (1.0 - p) / reps as f64).sqrt();
        assert!((freq - p).abs() < 3.0 * se, "freq={freq}, p={p}, se={se}");
    }

    #[test]
    fn pure_death_is_monotone() {
        let mut rng = stream(21, 0);
        let path = simulate_bd(&BdParams::plain(0.0, 1.0), 20, 50.0, 1000, &mut rng).unwrap();
        assert!(path.sizes.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(path.final_size(), 0);
    }

    #[test]
    fn mean_growth_matches_exponential() {
        let mut rng = stream(22, 0);
        let (lambda, nu, t) = (1.5, 1.0, 3.0);
        let reps = 40_000u64;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..reps {
            let (sizes, _) = simulate_bd_checkpoints(
                &BdParams::plain(lambda, nu),
                1,
                &[t],
                DEFAULT_POP_CAP,
                &mut rng,
            )
            .unwrap();
            let z = sizes[0] as f64;
            sum += z;
            sum2 += z * z;
        }
        let mean = sum / reps as f64;
        let var = sum2 / reps as f64 - mean * mean;
        let target = ((lambda - nu) * t).exp();
        let se = (var / reps as f64).sqrt();
        assert!((mean - target).abs() < 3.0 * se, "mean={mean}, target={target}");
    }

    #[test]
    fn immigration_mean_matches_quadrature() {
        // E[Z(t)] = integral phi(u) e^{(lambda-nu)(t-u)} du for Z(0) = 0.
        let profile = ImmigrationProfile { amp: 0.8, growth: 0.4, cutoff: 2.5 };
        let (lambda, nu, t) = (1.3, 1.0, 4.0);
        let params = BdParams { birth: lambda, death: nu, immigration: Some(profile) };
        // Simpson quadrature oracle on [0, cutoff].
        let f = |u: f64| profile.rate(u) * ((lambda - nu) * (t - u)).exp();
        let m = 4000;
        let h = profile.cutoff / m as f64;
        let mut target = 0.0;
        for i in 0..m {
            let a = i as f64 * h;
            target += h / 6.0 * (f(a) + 4.0 * f(a + 0.5 * h) + f(a + h));
        }
        let mut rng = stream(23, 0);
        let reps = 40_000u64;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..reps {
            let (sizes, _) =
                simulate_bd_checkpoints(&params, 0, &[t], DEFAULT_POP_CAP, &mut rng).unwrap();
            sum += sizes[0] as f64;
            sum2 += (sizes[0] as f64).powi(2);
        }
        let mean = sum / reps as f64;
        let var = sum2 / reps as f64 - mean * mean;
        let se = (var / reps as f64).sqrt();
        assert!((mean - target).abs() < 3.0 * se, "mean={mean}, target={target}");
    }

    #[test]
    fn immigrant_count_is_poisson() {
        // Dispersion index of the immigrant count ~ 1.
        let profile = ImmigrationProfile { amp: 1.5, growth: 0.7, cutoff: 3.0 };
        let params = BdParams { birth: 1.2, death: 1.0, immigration: Some(profile) };
        let mut rng = stream(24, 0);
        let reps = 20_000u64;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..reps {
            let (_, imm) =
                simulate_bd_checkpoints(&params, 0, &[4.0], DEFAULT_POP_CAP, &mut rng).unwrap();
            sum += imm as f64;
            sum2 += (imm as f64).powi(2);
        }
        let mean = sum / reps as f64;
        let var = sum2 / reps as f64 - mean * mean;
        assert_abs_diff_eq!(mean, profile.integral_to(4.0), epsilon = 4.0 * (mean / reps as f64).sqrt());
        let dispersion = var / mean;
        let se = (2.0 / reps as f64).sqrt();
        assert!((dispersion - 1.0).abs() < 3.0 * se, "dispersion={dispersion}");
    }

    #[test]
    fn transition_law_matches_event_driven() {
        // The closed-form transition sample must agree with the event-driven
        // simulator: survival frequency and conditional mean.
        let (lambda, nu, t) = (1.4, 1.0, 2.0);
        let mut rng = stream(25, 0);
        let reps = 60_000u64;
        let mut surv = [0u64; 2];
        let mut sum = [0f64; 2];
        let mut sum2 = [0f64; 2];
        for _ in 0..reps {
            let z_event = simulate_bd_checkpoints(
                &BdParams::plain(lambda, nu),
                1,
                &[t],
                DEFAULT_POP_CAP,
                &mut rng,
            )
            .unwrap()
            .0[0];
            let z_law = bd_transition_sample(lambda, nu, t, &mut rng);
            for (k, z) in [z_event, z_law].into_iter().enumerate() {
                if z > 0 {
                    surv[k] += 1;
                }
                sum[k] += z as f64;
                sum2[k] += (z * z) as f64;
            }
        }
        let p = survival_prob(lambda, nu, t).unwrap();
        for k in 0..2 {
            let freq = surv[k] as f64 / reps as f64;
            let se = (p * (1.0 - p) / reps as f64).sqrt();
            assert!((freq - p).abs() < 3.5 * se, "variant {k}: freq={freq} vs {p}");
            let mean = sum[k] / reps as f64;
            let var = sum2[k] / reps as f64 - mean * mean;
            let target = ((lambda - nu) * t).exp();
            assert!(
                (mean - target).abs() < 3.5 * (var / reps as f64).sqrt(),
                "variant {k}: mean={mean} vs {target}"
            );
        }
    }

    #[test]
    fn w_mean_is_one_and_exp_law_holds() {
        let mut rng = stream(26, 0);
        let report = w_limit_test(2.0, 1.0, 10.0, 4_000, &mut rng).unwrap();
        assert!(
            (report.mean_w - 1.0).abs() < 3.0 * report.mean_w_se,
            "mean W = {} +- {}",
            report.mean_w,
            report.mean_w_se
        );
        assert!(report.ks_p_value > 1e-3, "KS p = {}", report.ks_p_value);
        for c in &report.deviation_checks {
            assert!(
                c.observed_freq <= c.bound,
                "deviation bound violated at t={}, eta={}: {} > {}",
                c.t,
                c.eta,
                c.observed_freq,
                c.bound
            );
        }
    }

    #[test]
    fn ks_tail_sanity() {
        assert!(kolmogorov_tail(0.5) > 0.95);
        assert!(kolmogorov_tail(2.0) < 0.001);
        assert!((ks_p_value(100.0, 0.0) - 1.0).abs() < 1e-9);
    }
}
