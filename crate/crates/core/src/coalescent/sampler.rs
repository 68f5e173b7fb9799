//! Two independent samplers for the Bolthausen-Sznitman coalescent.
//!
//! The first simulates the embedded Markov chain directly from the exact
//! transition rates. The second realizes the Poisson-process construction:
//! points `(t, y)` with intensity `dt x y^{-2} dy` trigger a y-merger in
//! which each block independently participates with probability `y`. The
//! raw intensity is non-integrable at 0, but a point can only change the
//! partition when at least two blocks participate, and those effective
//! points arrive at the finite rate
//!
//! ```text
//! r(b) = integral_0^1 y^{-2} (1 - (1-y)^b - b y (1-y)^{b-1}) dy,
//! ```
//!
//! which coincides with the total merger rate. Only effective points are
//! simulated: the waiting time is Exp(r(b)) and `y` is drawn from the
//! conditioned density.

use super::partition::{merge_blocks, Partition};
use super::rates::{merger_size_weights, ratio_to_f64, total_merger_rate};
use crate::error::Result;
use crate::rng::StreamRng;
use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand_distr::{Distribution, Exp};

/// A realization of the coalescent up to a time horizon: the initial state
/// and the ordered merger events.
#[derive(Debug, Clone)]
pub struct CoalescentTrajectory {
    pub initial: Partition,
    /// Strictly increasing event times with the partition after each event;
    /// every partition strictly coarsens its predecessor.
    pub events: Vec<(f64, Partition)>,
}

impl CoalescentTrajectory {
    /// State at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> &Partition {
        let mut cur = &self.initial;
        for (et, p) in &self.events {
            if *et <= t {
                cur = p;
            } else {
                break;
            }
        }
        cur
    }
}

/// Embedded-chain sampler: holding time Exp(total rate), then a merger size
/// `k` with probability proportional to `C(b,k) lambda_{b,k}`, then a
/// uniform k-subset of blocks.
pub fn sample_bs_markov(
    n: usize,
    horizon: f64,
    rng: &mut StreamRng,
) -> Result<CoalescentTrajectory> {
    let initial = Partition::singletons(n);
    let mut events = Vec::new();
    let mut current = initial.clone();
    let mut t = 0.0;
    while current.num_blocks() >= 2 {
        let b = current.num_blocks() as u32;
        let total = ratio_to_f64(&total_merger_rate(b)?);
        t += Exp::new(total).unwrap().sample(rng);
        if t > horizon {
            break;
        }
        let weights = merger_size_weights(b)?;
        let mut u: f64 = rng.random::<f64>();
        let mut k = b; // fallback to the largest merger on rounding leftovers
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                k = i as u32 + 2;
                break;
            }
            u -= w;
        }
        let chosen = index_sample(rng, b as usize, k as usize).into_vec();
        current = merge_blocks(&current, &chosen)?;
        events.push((t, current.clone()));
    }
    Ok(CoalescentTrajectory { initial, events })
}

/// Tabulated inverse CDF of the conditioned participation fraction for a
/// fixed block count `b`: density proportional to
/// `y^{-2} P(Binomial(b, y) >= 2)` on (0, 1].
struct YTable {
    cdf: Vec<f64>,
    total: f64,
}

const Y_GRID: usize = 10_000;

impl YTable {
    fn build(b: u32) -> YTable {
        // The integrand expanded as sum_{k>=2} C(b,k) y^{k-2} (1-y)^{b-k}
        // is a positive-term polynomial, so evaluation near 0 is stable.
        // Per-cell Simpson keeps the tabulation error far below the Monte
        // Carlo scales it feeds.
        let f = |y: f64| effective_density(b, y);
        let h = 1.0 / Y_GRID as f64;
        let mut cdf = Vec::with_capacity(Y_GRID + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        let mut prev = f(0.0);
        for i in 1..=Y_GRID {
            let y = i as f64 * h;
            let cur = f(y);
            let mid = f(y - 0.5 * h);
            acc += h / 6.0 * (prev + 4.0 * mid + cur);
            cdf.push(acc);
            prev = cur;
        }
        YTable { total: acc, cdf }
    }

    fn sample(&self, rng: &mut StreamRng) -> f64 {
        let target = rng.random::<f64>() * self.total;
        let idx = self.cdf.partition_point(|&c| c < target);
        let i = idx.clamp(1, Y_GRID);
        let (lo, hi) = (self.cdf[i - 1], self.cdf[i]);
        let frac = if hi > lo { (target - lo) / (hi - lo) } else { 0.5 };
        ((i - 1) as f64 + frac) / Y_GRID as f64
    }
}

/// `y^{-2} (1 - (1-y)^b - b y (1-y)^{b-1})`, computed in the cancellation-free
/// positive form `sum_{k=2}^{b} C(b,k) y^{k-2} (1-y)^{b-k}`.
pub(crate) fn effective_density(b: u32, y: f64) -> f64 {
    let bf = b as f64;
    let mut binom = 0.5 * bf * (bf - 1.0); // C(b,2)
    let mut sum = 0.0;
    for k in 2..=b {
        sum += binom * y.powi(k as i32 - 2) * (1.0 - y).powi((b - k) as i32);
        binom *= (bf - k as f64) / (k as f64 + 1.0);
    }
    sum
}

/// Poisson-construction sampler. Statistically equivalent to
/// [`sample_bs_markov`]; the two are compared to validate each other.
pub fn sample_bs_poisson(
    n: usize,
    horizon: f64,
    rng: &mut StreamRng,
) -> Result<CoalescentTrajectory> {
    let initial = Partition::singletons(n);
    let mut events = Vec::new();
    let mut current = initial.clone();
    let mut t = 0.0;
    let mut table: Option<(u32, YTable)> = None;
    while current.num_blocks() >= 2 {
        let b = current.num_blocks() as u32;
        let rate = ratio_to_f64(&total_merger_rate(b)?);
        t += Exp::new(rate).unwrap().sample(rng);
        if t > horizon {
            break;
        }
        if table.as_ref().map(|(tb, _)| *tb) != Some(b) {
            table = Some((b, YTable::build(b)));
        }
        let y = table.as_ref().unwrap().1.sample(rng);
        // Each block joins independently with probability y, conditioned on
        // at least two joining.
        let mut joining: Vec<usize> = Vec::with_capacity(b as usize);
        loop {
            joining.clear();
            for i in 0..b as usize {
                if rng.random::<f64>() < y {
                    joining.push(i);
                }
            }
            if joining.len() >= 2 {
                break;
            }
        }
        current = merge_blocks(&current, &joining)?;
        events.push((t, current.clone()));
    }
    Ok(CoalescentTrajectory { initial, events })
}

/// Empirical rate estimate of y-mergers with participation fraction at or
/// above a threshold, measured at a fixed block count.
#[derive(Debug, Clone, Copy)]
pub struct YMergerRateEstimate {
    pub threshold: f64,
    pub rate: f64,
    pub std_error: f64,
    pub events_counted: u64,
}

/// Hold the block count at `b` (statistically equivalent to restarting after
/// each event) for `events` effective points, and measure the empirical rate
/// of points with `y >= threshold`. For thresholds `x/(1+x)` the raw
/// intensity integrates to `1/x`, and for non-tiny thresholds effective
/// points are practically all points once `b` is large.
pub fn estimate_y_merger_rate(
    b: u32,
    threshold: f64,
    events: u64,
    rng: &mut StreamRng,
) -> Result<YMergerRateEstimate> {
    let rate = ratio_to_f64(&total_merger_rate(b)?);
    let exp = Exp::new(rate).unwrap();
    let table = YTable::build(b);
    let mut total_time = 0.0;
    let mut count: u64 = 0;
    for _ in 0..events {
        total_time += exp.sample(rng);
        if table.sample(rng) >= threshold {
            count += 1;
        }
    }
    Ok(YMergerRateEstimate {
        threshold,
        rate: count as f64 / total_time,
        std_error: (count.max(1) as f64).sqrt() / total_time,
        events_counted: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn single_lineage_never_merges() {
        let mut rng = stream(1, 0);
        let tr = sample_bs_markov(1, 100.0, &mut rng).unwrap();
        assert!(tr.events.is_empty());
        let tr = sample_bs_poisson(1, 100.0, &mut rng).unwrap();
        assert!(tr.events.is_empty());
    }

    #[test]
    fn pair_merges_at_rate_one() {
        // With two blocks the merge time is Exp(1) for both constructions.
        for sampler in [sample_bs_markov, sample_bs_poisson] {
            let mut rng = stream(2, 0);
            let reps = 20_000;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..reps {
                let tr = sampler(2, f64::INFINITY, &mut rng).unwrap();
                let t = tr.events[0].0;
                sum += t;
                sumsq += t * t;
            }
            let mean = sum / reps as f64;
            let var = sumsq / reps as f64 - mean * mean;
            let se = (var / reps as f64).sqrt();
            assert!((mean - 1.0).abs() < 3.0 * se, "mean={mean}, se={se}");
        }
    }

    #[test]
    fn trajectories_strictly_coarsen() {
        let mut rng = stream(3, 0);
        for _ in 0..200 {
            for sampler in [sample_bs_markov, sample_bs_poisson] {
                let tr = sampler(6, f64::INFINITY, &mut rng).unwrap();
                let mut prev = tr.initial.clone();
                let mut prev_t = 0.0;
                for (t, p) in &tr.events {
                    assert!(*t > prev_t);
                    assert!(prev.refines(p) && p.num_blocks() < prev.num_blocks());
                    prev = p.clone();
                    prev_t = *t;
                }
            }
        }
    }

    #[test]
    fn effective_density_limits() {
        // At y -> 0 the conditioned integrand tends to C(b,2); at y = 1 it is 1.
        for b in [2u32, 5, 12] {
            let c2 = 0.5 * b as f64 * (b as f64 - 1.0);
            assert!((effective_density(b, 0.0) - c2).abs() < 1e-9);
            assert!((effective_density(b, 1.0) - 1.0).abs() < 1e-9);
        }
    }
}
