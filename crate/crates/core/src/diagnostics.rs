//! Checks connecting forward-simulation output to the model's quantitative
//! structure: the rescaled front against the delay-equation profile, per-type
//! growth rates, first-passage spacing, and the compensated-count martingale.

use crate::error::{Error, Result};
use crate::popsim::{EventHooks, EventRecord, PopulationState, SnapshotRow, TauRecord};
use crate::scaling::{QProfile, ScaleConstants, Side};

/// Per-type front constants derived from the first-passage record:
/// `q_j` (the lead of type j over the mean at `tau_j`, with the special
/// near-`a_N` window rule and floor at 1), the early-mutation window end
/// `xi_j`, and `gamma_j = tau_j + a_N`.
#[derive(Debug, Clone, Copy)]
pub struct FrontTypeStats {
    pub j: usize,
    pub tau: f64,
    pub q_j: f64,
    pub xi_j: f64,
    pub gamma_j: f64,
}

#[derive(Debug, Clone)]
pub struct FrontStats {
    pub per_type: Vec<FrontTypeStats>,
    /// `b = log(24000 T / (delta^2 epsilon))`.
    pub b: f64,
}

/// Test-configuration knobs for the constant `b`.
#[derive(Debug, Clone, Copy)]
pub struct FrontConfig {
    pub delta: f64,
    pub epsilon: f64,
    pub t_cap: f64,
}

impl Default for FrontConfig {
    fn default() -> Self {
        FrontConfig { delta: 0.01, epsilon: 0.1, t_cap: 4.0 }
    }
}

pub fn front_constants(
    tau: &TauRecord,
    scale: &ScaleConstants,
    s: f64,
    cfg: &FrontConfig,
) -> FrontStats {
    let b = (24000.0 * cfg.t_cap / (cfg.delta * cfg.delta * cfg.epsilon)).ln();
    let window = (scale.a_n - 2.0 * scale.a_n / scale.k_n, scale.a_n + 2.0 * scale.a_n / scale.k_n);
    let per_type = tau
        .iter()
        .map(|(j, tau_j, m_at_tau)| {
            let q_star = if (window.0..=window.1).contains(&tau_j) {
                j as f64 - scale.k_n
            } else {
                j as f64 - m_at_tau
            };
            let q_j = q_star.max(1.0);
            let sq = s * q_j;
            let xi_j = tau_j + (((1.0 / sq).ln() + b) / sq).max(0.0);
            FrontTypeStats { j, tau: tau_j, q_j, xi_j, gamma_j: tau_j + scale.a_n }
        })
        .collect();
    FrontStats { per_type, b }
}

/// Fraction of consecutive first-passage spacings inside the band
/// `[a_N / 3k_N, 2 a_N / k_N]`; descriptive at finite N.
pub fn tau_spacing_in_band(tau: &TauRecord, scale: &ScaleConstants) -> (usize, usize) {
    let entries: Vec<(usize, f64)> = tau.iter().map(|(j, t, _)| (j, t)).collect();
    let lo = scale.a_n / (3.0 * scale.k_n);
    let hi = 2.0 * scale.a_n / scale.k_n;
    let mut total = 0;
    let mut inside = 0;
    for w in entries.windows(2) {
        if w[1].0 == w[0].0 + 1 && w[0].1 > 0.0 {
            total += 1;
            let gap = w[1].1 - w[0].1;
            if (lo..=hi).contains(&gap) {
                inside += 1;
            }
        }
    }
    (inside, total)
}

/// Supremum over snapshots of `|Q(a_N t)/k_N - q(t)|` on a compact set of
/// rescaled times, where `Q` is the lead of the fittest occupied type over
/// the mean.
pub fn q_profile_check(
    snapshots: &[SnapshotRow],
    scale: &ScaleConstants,
    profile: &QProfile,
    set: &[(f64, f64)],
) -> Result<QProfileDeviation> {
    let mut sup: f64 = 0.0;
    let mut points = 0usize;
    for row in snapshots {
        let t_units = row.t / scale.a_n;
        if !set.iter().any(|&(a, b)| (a..=b).contains(&t_units)) {
            continue;
        }
        if t_units > profile.t_max() {
            return Err(Error::Argument(format!(
                "snapshot at rescaled time {t_units} beyond the solved profile"
            )));
        }
        let q_front = (row.max_type() as f64 - row.mean()) / scale.k_n;
        let dev = (q_front - profile.eval(t_units, Side::Right)).abs();
        sup = sup.max(dev);
        points += 1;
    }
    if points == 0 {
        return Err(Error::Argument("no snapshots inside the requested set".into()));
    }
    Ok(QProfileDeviation { sup_deviation: sup, points })
}

#[derive(Debug, Clone, Copy)]
pub struct QProfileDeviation {
    pub sup_deviation: f64,
    pub points: usize,
}

/// Least-squares fit of a lineage-count logarithm against its predicted
/// exponential growth.
#[derive(Debug, Clone, Copy)]
pub struct GrowthFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_target: f64,
    pub intercept_target: f64,
    pub points: usize,
}

/// Outcome of [`growth_check`]: either fits for types `j-1` and `j` on
/// `(tau_j, tau_{j+1})`, or a skip notice naming the missing ingredient.
#[derive(Debug, Clone)]
pub enum GrowthCheck {
    Fits { lower: GrowthFit, upper: GrowthFit },
    Skipped(String),
}

pub fn growth_check(
    snapshots: &[SnapshotRow],
    tau: &TauRecord,
    j: usize,
    s: f64,
    mu: f64,
    q_j: f64,
) -> GrowthCheck {
    let (Some(t0), Some(t1)) = (tau.tau(j), tau.tau(j + 1)) else {
        return GrowthCheck::Skipped(format!("tau_{j} or tau_{} not recorded", j + 1));
    };
    let count_of = |row: &SnapshotRow, jj: usize| {
        row.counts.iter().find(|&&(t, _)| t as usize == jj).map(|&(_, c)| c).unwrap_or(0)
    };
    let mut lower_pts: Vec<(f64, f64)> = Vec::new();
    let mut upper_pts: Vec<(f64, f64)> = Vec::new();
    for row in snapshots {
        if row.t <= t0 || row.t >= t1 {
            continue;
        }
        let x_lower = count_of(row, j - 1);
        let x_upper = count_of(row, j);
        if x_lower > 0 {
            lower_pts.push((row.t - t0, (x_lower as f64).ln()));
        }
        if x_upper > 0 {
            upper_pts.push((row.t - t0, (x_upper as f64).ln()));
        }
    }
    if lower_pts.len() < 3 || upper_pts.len() < 3 {
        return GrowthCheck::Skipped(format!(
            "insufficient occupancy between tau_{j} and tau_{} ({} / {} usable snapshots)",
            j + 1,
            lower_pts.len(),
            upper_pts.len()
        ));
    }
    let fit = |pts: &[(f64, f64)], slope_target: f64, intercept_target: f64| {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        GrowthFit {
            slope,
            intercept: (sy - slope * sx) / n,
            slope_target,
            intercept_target,
            points: pts.len(),
        }
    };
    GrowthCheck::Fits {
        lower: fit(&lower_pts, s * (q_j - 1.0), (s / mu).ln()),
        upper: fit(&upper_pts, s * q_j, 0.0),
    }
}

/// One constant-rate stretch of a recorded per-type martingale feed.
#[derive(Debug, Clone, Copy)]
pub struct MartingaleSegment {
    pub dt: f64,
    pub x_j: u64,
    pub x_jm1: u64,
    /// `G* = B_j - D_j` on the stretch.
    pub g_star: f64,
    /// `B_j + D_j` on the stretch.
    pub bd_sum: f64,
}

/// Everything needed to evaluate the compensated count over a window.
#[derive(Debug, Clone, Default)]
pub struct MartingaleFeed {
    pub segments: Vec<MartingaleSegment>,
    pub x_start: u64,
    pub x_end: u64,
}

/// Records a [`MartingaleFeed`] for one type over a time window.
pub struct MartingaleRecorder {
    type_j: usize,
    t0: f64,
    t1: f64,
    s: f64,
    mu: f64,
    seg_open: f64,
    started: bool,
    pub feed: MartingaleFeed,
    done: bool,
}

impl MartingaleRecorder {
    pub fn new(type_j: usize, window: (f64, f64), s: f64, mu: f64) -> Self {
        MartingaleRecorder {
            type_j,
            t0: window.0,
            t1: window.1,
            s,
            mu,
            seg_open: window.0,
            started: false,
            feed: MartingaleFeed::default(),
            done: false,
        }
    }

    fn rates(&self, state: &PopulationState) -> (f64, f64) {
        // per-individual birth and death rates of the type
        let n = state.n() as f64;
        let w_tot = state.total_fitness(self.s);
        let x_j = state.count(self.type_j) as f64;
        let fit = (1.0 + self.s * (self.type_j as f64 - state.mean())).max(0.0) / w_tot;
        let b_j = (n - x_j) * fit;
        let d_j = 1.0 + self.mu - x_j * fit;
        (b_j, d_j)
    }

    fn close(&mut self, state: &PopulationState, t: f64) {
        let t = t.min(self.t1);
        if !self.started {
            self.feed.x_start = state.count(self.type_j) as u64;
            self.started = true;
        }
        if t > self.seg_open {
            let (b_j, d_j) = self.rates(state);
            self.feed.segments.push(MartingaleSegment {
                dt: t - self.seg_open,
                x_j: state.count(self.type_j) as u64,
                x_jm1: if self.type_j > 0 { state.count(self.type_j - 1) as u64 } else { 0 },
                g_star: b_j - d_j,
                bd_sum: b_j + d_j,
            });
        }
        self.seg_open = t;
        self.feed.x_end = state.count(self.type_j) as u64;
    }
}

impl EventHooks for MartingaleRecorder {
    fn before_event(&mut self, state: &PopulationState, ev: &EventRecord) {
        let t = ev.time();
        if self.done || t <= self.t0 {
            return;
        }
        self.close(state, t);
        if t > self.t1 {
            self.done = true;
        }
    }

    fn at_horizon(&mut self, state: &PopulationState, t_end: f64) {
        if !self.done {
            self.close(state, t_end);
            self.done = true;
        }
    }
}

/// Result of evaluating one feed.
#[derive(Debug, Clone, Copy)]
pub struct MartingalePathValue {
    /// `Z_j(t1)` computed with exact piecewise-constant integrals.
    pub z_end: f64,
    /// Pathwise value of the variance integrand
    /// `int e^{-2 int G*} (mu X_{j-1} + (B_j + D_j) X_j) du`.
    pub variance_integral: f64,
}

/// Evaluate the compensated count
/// `Z_j(t1) = e^{-int G*} X_j(t1) - int mu X_{j-1}(u) e^{-int G*} du - X_j(t0)`
/// over a recorded feed; all integrals are exact sums over the constant
/// stretches.
pub fn martingale_path_value(feed: &MartingaleFeed, mu: f64) -> MartingalePathValue {
    let mut i_acc = 0.0f64; // int_0^u G* dv
    let mut drift = 0.0;
    let mut var_int = 0.0;
    for seg in &feed.segments {
        // int_seg e^{-I(u)} du with I linear on the stretch
        let e0 = (-i_acc).exp();
        drift += mu * seg.x_jm1 as f64 * e0 * growth_factor(-seg.g_star, seg.dt);
        let e0sq = (-2.0 * i_acc).exp();
        var_int += (mu * seg.x_jm1 as f64 + seg.bd_sum * seg.x_j as f64)
            * e0sq
            * growth_factor(-2.0 * seg.g_star, seg.dt);
        i_acc += seg.g_star * seg.dt;
    }
    MartingalePathValue {
        z_end: (-i_acc).exp() * feed.x_end as f64 - drift - feed.x_start as f64,
        variance_integral: var_int,
    }
}

/// `int_0^dt e^{g u} du`, stable for small `g dt`.
fn growth_factor(g: f64, dt: f64) -> f64 {
    if g == 0.0 {
        dt
    } else {
        (g * dt).exp_m1() / g
    }
}

/// Split each stretch into `parts` equal pieces; the represented path is
/// identical, so every derived integral must agree.
pub fn refine_feed(feed: &MartingaleFeed, parts: usize) -> MartingaleFeed {
    let mut out = MartingaleFeed { segments: Vec::new(), ..*feed };
    for seg in &feed.segments {
        for _ in 0..parts {
            out.segments.push(MartingaleSegment { dt: seg.dt / parts as f64, ..*seg });
        }
    }
    out
}

/// Replicate-aggregated martingale check.
#[derive(Debug, Clone, Copy)]
pub struct MartingaleCheck {
    pub replicates: usize,
    pub mean_z: f64,
    pub mean_z_se: f64,
    /// Empirical `Var(Z(t1))` across replicates.
    pub empirical_variance: f64,
    /// Monte Carlo average of the variance integrand.
    pub predicted_variance: f64,
    pub variance_ratio: f64,
}

pub fn martingale_check(values: &[MartingalePathValue]) -> Result<MartingaleCheck> {
    if values.len() < 2 {
        return Err(Error::Argument("need at least two replicates".into()));
    }
    let n = values.len() as f64;
    let mean_z = values.iter().map(|v| v.z_end).sum::<f64>() / n;
    let var_z = values.iter().map(|v| (v.z_end - mean_z).powi(2)).sum::<f64>() / (n - 1.0);
    let predicted = values.iter().map(|v| v.variance_integral).sum::<f64>() / n;
    Ok(MartingaleCheck {
        replicates: values.len(),
        mean_z,
        mean_z_se: (var_z / n).sqrt(),
        empirical_variance: var_z,
        predicted_variance: predicted,
        variance_ratio: var_z / predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::popsim::{ModelParams, Population, SnapshotRecorder};
    use crate::rng::stream;
    use crate::scaling::solve_q;

    #[test]
    fn front_constants_branches() {
        use crate::popsim::TauRecord;
        let scale = crate::scaling::scaling_constants(10_000, 1e-4, 0.05).unwrap();
        let mut tau = TauRecord::default();
        // direct access through the recording path: replicate the rule by
        // constructing a record via a tiny simulation is overkill; drive the
        // branch logic with hand values instead.
        let a_n = scale.a_n;
        let k_n = scale.k_n;
        // tau outside the window with M(tau) = j - 3 -> q_j = 3
        tau_record(&mut tau, 5, 0.1 * a_n, 2.0);
        // tau inside [a_N - 2a_N/k_N, a_N + 2a_N/k_N] -> q* = j - k_N
        tau_record(&mut tau, 6, a_n, 0.0);
        // q* < 1 -> floor at 1
        tau_record(&mut tau, 7, 3.0 * a_n, 6.9);
        let stats = front_constants(&tau, &scale, 0.05, &FrontConfig::default());
        let find = |j: usize| stats.per_type.iter().find(|e| e.j == j).unwrap();
        assert!((find(5).q_j - 3.0).abs() < 1e-12);
        assert!((find(6).q_j - (6.0 - k_n)).abs() < 1e-12);
        assert!((find(7).q_j - 1.0).abs() < 1e-12);
        for e in &stats.per_type {
            assert!((e.gamma_j - e.tau - a_n).abs() < 1e-12);
            assert!(e.q_j >= 1.0);
            assert!(e.xi_j >= e.tau);
        }
        // b = log(24000 * 4 / (1e-4 * 0.1))
        assert!((stats.b - (24000.0f64 * 4.0 / (1e-4 * 0.1)).ln()).abs() < 1e-12);
    }

    fn tau_record(tau: &mut crate::popsim::TauRecord, j: usize, t: f64, m: f64) {
        // test-only back door mirroring the recording rule
        tau.record_for_test(j, t, m);
    }

    #[test]
    fn q_profile_deviation_zero_on_synthetic_front() {
        // Snapshots manufactured so that Q(a_N t) = k_N q(t) exactly.
        let scale = crate::scaling::scaling_constants(10_000, 1e-4, 0.05).unwrap();
        let profile = solve_q(4.0, 1e-3).unwrap();
        let mut rows = Vec::new();
        for i in 1..40 {
            let t_units = 0.1 * i as f64;
            if (t_units - 1.0).abs() < 0.15 {
                continue;
            }
            let q = profile.eval(t_units, Side::Right);
            // mean 0 with max type exactly k_N q(t): encode the mean through
            // a huge count at type 0 is impossible with integer types, so
            // place the mass to make mean = max - k_N q.
            let max_type = 30u32;
            let mean_target = max_type as f64 - scale.k_n * q;
            // two-point distribution on {0, max_type} with one individual at
            // the front: choose count at max_type = 1, and the rest at a
            // type below; use real-valued mean via mixing two adjacent types.
            let lo = mean_target.floor() as u32;
            let frac = mean_target - lo as f64;
            let n = 100_000u64;
            let hi_count = (frac * (n - 1) as f64).round() as u32;
            let rest = (n - 1) as u32 - hi_count;
            // adjust so the weighted mean matches to rounding
            let mut counts = vec![(lo, rest), (lo + 1, hi_count), (max_type, 1)];
            counts.retain(|&(_, c)| c > 0);
            let row = SnapshotRow { t: t_units * scale.a_n, counts };
            rows.push(row);
        }
        let dev = q_profile_check(&rows, &scale, &profile, &[(0.05, 0.9), (1.15, 3.9)]).unwrap();
        // rounding of the mean construction keeps this near machine zero
        assert!(dev.sup_deviation < 1e-4, "sup {}", dev.sup_deviation);
        assert!(dev.points > 10);
    }

    #[test]
    fn growth_check_on_synthetic_exponentials() {
        use crate::popsim::TauRecord;
        let mut tau = TauRecord::default();
        tau.record_for_test(3, 10.0, 0.0);
        tau.record_for_test(4, 30.0, 0.0);
        let (s, mu, q3) = (0.05, 1e-4, 2.0);
        let mut rows = Vec::new();
        for i in 1..40 {
            let t = 10.0 + 0.5 * i as f64;
            if t >= 30.0 {
                break;
            }
            let x2 = (s / mu) * (s * (q3 - 1.0) * (t - 10.0)).exp();
            let x3 = (s * q3 * (t - 10.0)).exp();
            rows.push(SnapshotRow {
                t,
                counts: vec![(2, x2.round() as u32), (3, x3.round().max(1.0) as u32)],
            });
        }
        match growth_check(&rows, &tau, 3, s, mu, q3) {
            GrowthCheck::Fits { lower, upper } => {
                assert!((lower.slope - lower.slope_target).abs() < 0.01);
                assert!((lower.intercept - lower.intercept_target).abs() < 0.05);
                assert!((upper.slope - upper.slope_target).abs() < 0.02);
            }
            GrowthCheck::Skipped(why) => panic!("unexpected skip: {why}"),
        }
        // a type that never reached the threshold is skipped with a notice
        match growth_check(&rows, &tau, 7, s, mu, q3) {
            GrowthCheck::Skipped(_) => {}
            _ => panic!("expected a skip notice"),
        }
    }

    #[test]
    fn martingale_zero_window_and_refinement() {
        let params = ModelParams {
            n: 300,
            mu: 5e-3,
            s: 0.08,
            t_units: 1.0,
            seed: 0,
            ancestry_simplify_interval: 0,
        };
        let mut pop = Population::new(params).unwrap();
        let mut rng = stream(50, 0);
        let mut rec = MartingaleRecorder::new(1, (0.0, 6.0), 0.08, 5e-3);
        pop.run_until(6.0, &mut rng, &mut rec).unwrap();
        let v = martingale_path_value(&rec.feed, 5e-3);
        let refined = refine_feed(&rec.feed, 3);
        let v2 = martingale_path_value(&refined, 5e-3);
        assert!((v.z_end - v2.z_end).abs() <= 1e-9 * (1.0 + v.z_end.abs()));
        assert!(
            (v.variance_integral - v2.variance_integral).abs()
                <= 1e-9 * (1.0 + v.variance_integral.abs())
        );

        // zero-length window: Z = 0 exactly
        let empty = MartingaleFeed { segments: vec![], x_start: 7, x_end: 7 };
        assert_eq!(martingale_path_value(&empty, 5e-3).z_end, 0.0);
    }

    #[test]
    fn martingale_mean_zero_across_replicates() {
        let params = ModelParams {
            n: 200,
            mu: 5e-3,
            s: 0.08,
            t_units: 1.0,
            seed: 0,
            ancestry_simplify_interval: 0,
        };
        let mut values = Vec::new();
        for rep in 0..400 {
            let mut pop = Population::new(params.clone()).unwrap();
            let mut rng = stream(51, rep);
            let mut rec = MartingaleRecorder::new(1, (0.0, 4.0), params.s, params.mu);
            pop.run_until(4.0, &mut rng, &mut rec).unwrap();
            values.push(martingale_path_value(&rec.feed, params.mu));
        }
        let check = martingale_check(&values).unwrap();
        assert!(
            check.mean_z.abs() <= 3.5 * check.mean_z_se,
            "mean {} se {}",
            check.mean_z,
            check.mean_z_se
        );
        assert!(
            (0.7..1.4).contains(&check.variance_ratio),
            "variance ratio {}",
            check.variance_ratio
        );
    }
}
