//! Scaling constants and the limiting fitness-front profile.
//!
//! The model with population size `N`, per-individual mutation rate `mu`,
//! and per-mutation advantage `s` has two natural scales,
//!
//! ```text
//! k_N = ln N / ln(s/mu)      (mutation-count scale)
//! a_N = ln(s/mu) / s         (time scale)
//! ```
//!
//! and a limiting front profile `q` solving the delay integral equation
//!
//! ```text
//! q(t) = e^t                      for 0 <= t < 1,
//! q(t) = integral_{t-1}^{t} q(u) du   for t >= 1,
//! ```
//!
//! with `1 <= q <= e`, a jump at `t = 1` (`q(1-) = e`, `q(1+) = e - 1`),
//! and `q(t) -> 2` as `t -> infinity`.

use crate::error::{Error, Result};

/// The two scaling constants plus dimensionless diagnostics for the three
/// asymptotic parameter assumptions. The assumptions are limits in `N`, so
/// at finite `N` they can only be quantified, never pass or fail; callers
/// decide what to make of the reported magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleConstants {
    /// `ln N / ln(s/mu)`
    pub k_n: f64,
    /// `ln(s/mu) / s`, in model time units.
    pub a_n: f64,
    /// `k_N / ln(1/s)`; large when the first assumption is comfortable.
    pub a1: f64,
    /// `k_N ln k_N / ln(s/mu)`; small when the second assumption is comfortable.
    pub a2: f64,
    /// `s k_N`; small when the third assumption is comfortable.
    pub a3: f64,
}

/// Compute the scaling constants for a parameter triple.
///
/// Requires `N >= 2` and `0 < mu < s < 1`.
pub fn scaling_constants(n: u64, mu: f64, s: f64) -> Result<ScaleConstants> {
    if n < 2 {
        return Err(Error::Config(format!("N must be >= 2, got {n}")));
    }
    if !(mu > 0.0 && mu < s && s < 1.0) {
        return Err(Error::Config(format!(
            "rates must satisfy 0 < mu < s < 1, got mu={mu}, s={s}"
        )));
    }
    let log_ratio = (s / mu).ln();
    let k_n = (n as f64).ln() / log_ratio;
    let a_n = log_ratio / s;
    Ok(ScaleConstants {
        k_n,
        a_n,
        a1: k_n / (1.0 / s).ln(),
        a2: k_n * k_n.ln() / log_ratio,
        a3: s * k_n,
    })
}

/// Solution of the delay integral equation on a uniform grid.
///
/// `values[i]` is `q(i*h)`, taking the right limit at the jump point `t = 1`;
/// the left limit there is `left_at_one` (= e). All other grid points are
/// continuity points.
#[derive(Debug, Clone)]
pub struct QProfile {
    pub h: f64,
    pub values: Vec<f64>,
    pub left_at_one: f64,
}

impl QProfile {
    pub fn t_max(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.h
    }

    /// Value at grid index `i` (right limit at the jump).
    pub fn at_index(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// `q(t)` by linear interpolation between grid points. Grid values are
    /// right limits; `side` selects the branch when `t` lands exactly on the
    /// jump point.
    pub fn eval(&self, t: f64, side: Side) -> f64 {
        let last = self.values.len() - 1;
        let x = (t / self.h).clamp(0.0, last as f64);
        let i = (x.floor() as usize).min(last - 1);
        let frac = x - i as f64;
        if frac.abs() < 1e-12 {
            let at_jump = (t - 1.0).abs() < 0.5 * self.h;
            return if side == Side::Left && at_jump {
                self.left_at_one
            } else {
                self.values[i]
            };
        }
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Solve the delay integral equation on `[0, t_max]` with step `h`.
///
/// `h` must divide 1 so the unit delay window is a whole number of steps;
/// the window integral is a composite trapezoid maintained as an O(1)
/// sliding sum, giving O(h^2) accuracy. The jump at `t = 1` is handled by
/// keeping both one-sided values and integrating each sub-segment with the
/// correct side.
pub fn solve_q(t_max: f64, h: f64) -> Result<QProfile> {
    if !(h > 0.0 && h <= 1e-3) {
        return Err(Error::Argument(format!("step must be in (0, 1e-3], got {h}")));
    }
    if t_max < 2.0 {
        return Err(Error::Argument(format!("t_max must be >= 2, got {t_max}")));
    }
    let m = (1.0 / h).round() as usize;
    if ((m as f64) * h - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("step {h} must divide 1 exactly")));
    }
    let steps = (t_max / h).ceil() as usize;
    let mut q = Vec::with_capacity(steps + 1);

    // Explicit branch on [0, 1): q(t) = e^t, with the left limit e at t = 1.
    for i in 0..m {
        q.push((i as f64 * h).exp());
    }
    let left_at_one = 1f64.exp();

    // Per-segment trapezoid contributions c[k] over [t_k, t_{k+1}]. The
    // segment ending at the jump uses the left limit as its right endpoint.
    let seg = |qk: f64, qk1: f64| 0.5 * h * (qk + qk1);

    // Running window sum of the m segments ending at the current point.
    // Initialize for the window [0, 1]: all-exponential segments.
    let mut window: f64 = 0.0;
    for i in 0..m {
        let right = if i + 1 == m { left_at_one } else { q[i + 1] };
        window += seg(q[i], right);
    }
    // The right limit at t = 1 is the window integral itself.
    q.push(window);

    // March forward. To advance from t_i to t_{i+1} (i >= m):
    //   q_{i+1} = window(i+1) = window(i) + c_i - c_{i-m}
    // where c_i = h/2 (q_i + q_{i+1}) is implicit in q_{i+1}; solve linearly.
    // Segment c_{i-m} needs the jump-aware right endpoint.
    let mut ring: Vec<f64> = Vec::with_capacity(steps);
    for i in 0..m {
        let right = if i + 1 == m { left_at_one } else { q[i + 1] };
        ring.push(seg(q[i], right));
    }
    for i in m..steps {
        let drop = ring[i - m];
        let rhs = window - drop + 0.5 * h * q[i];
        let q_next = rhs / (1.0 - 0.5 * h);
        let c_new = seg(q[i], q_next);
        window = window - drop + c_new;
        ring.push(c_new);
        q.push(q_next);
    }

    Ok(QProfile { h, values: q, left_at_one })
}

/// Deviation of the profile tail from the known limit 2.
#[derive(Debug, Clone, Copy)]
pub struct QLimitReport {
    pub t_last: f64,
    pub q_last: f64,
    pub deviation: f64,
}

/// Report how far the end of a profile is from the limit `q(t) -> 2`.
/// Purely descriptive: the convergence rate is not part of the contract.
pub fn q_limit_report(profile: &QProfile) -> QLimitReport {
    let q_last = *profile.values.last().unwrap();
    QLimitReport {
        t_last: profile.t_max(),
        q_last,
        deviation: (q_last - 2.0).abs(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const E: f64 = std::f64::consts::E;

    #[test]
    fn constants_match_direct_arithmetic() {
        let c = scaling_constants(1_000_000, 1e-6, 1e-2).unwrap();
        assert_abs_diff_eq!(c.k_n, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(c.a_n, (1e4f64).ln() / 1e-2, epsilon = 1e-9);

        let c = scaling_constants(1_000_000_000, 1e-5, 1e-1).unwrap();
        assert_abs_diff_eq!(c.k_n, 2.25, epsilon = 1e-12);
        assert_abs_diff_eq!(c.a_n, 92.103403719761834, epsilon = 1e-9);
    }

    #[test]
    fn constants_small_population_regression() {
        // Independently evaluated: ln 2 / ln 1.25.
        let c = scaling_constants(2, 0.4, 0.5).unwrap();
        assert_abs_diff_eq!(c.k_n, 3.1062837194501668, epsilon = 1e-12);
    }

    #[test]
    fn constants_reject_bad_domains() {
        assert!(scaling_constants(1, 1e-4, 1e-2).is_err());
        assert!(scaling_constants(100, 1e-2, 1e-2).is_err());
        assert!(scaling_constants(100, 1e-2, 1e-4).is_err());
    }

    #[test]
    fn constants_monotonicity() {
        let base = scaling_constants(10_000, 1e-4, 0.05).unwrap();
        let bigger_n = scaling_constants(100_000, 1e-4, 0.05).unwrap();
        assert!(bigger_n.k_n > base.k_n);
        let bigger_s = scaling_constants(10_000, 1e-4, 0.08).unwrap();
        assert!(bigger_s.a_n < base.a_n);
    }

    #[test]
    fn q_exponential_branch_and_jump() {
        let p = solve_q(3.0, 1e-3).unwrap();
        let tol = 10.0 * 1e-3 * 1e-3;
        for i in 0..1000 {
            let t = i as f64 * 1e-3;
            assert!((p.values[i] - t.exp()).abs() < tol, "t={t}");
        }
        assert_abs_diff_eq!(p.left_at_one, E, epsilon = 1e-15);
        // Right limit: integral of e^u over [0,1].
        assert_abs_diff_eq!(p.values[1000], E - 1.0, epsilon = 1e-6);
    }

    #[test]
    fn q_closed_form_on_second_interval() {
        // On [1,2] the equation reduces to q'(t) = q(t) - e^{t-1} with
        // q(1+) = e - 1, whose solution is q(t) = e^{t-1} (e - t).
        let p = solve_q(3.0, 1e-4).unwrap();
        let idx = |t: f64| (t / 1e-4).round() as usize;
        assert_abs_diff_eq!(p.values[idx(0.5)], E.sqrt(), epsilon = 1e-6);
        assert_abs_diff_eq!(p.values[idx(1.5)], 0.5f64.exp() * (E - 1.5), epsilon = 1e-6);
        assert_abs_diff_eq!(p.values[idx(2.0)], E * (E - 2.0), epsilon = 1e-6);
    }

    #[test]
    fn q_bounds_hold_everywhere() {
        let p = solve_q(10.0, 1e-3).unwrap();
        for (i, &v) in p.values.iter().enumerate() {
            assert!(
                (1.0..=E + 1e-12).contains(&v),
                "q out of [1, e] at index {i}: {v}"
            );
        }
    }

    #[test]
    fn q_second_order_convergence() {
        // Error against a fine-grid reference should shrink ~4x when h halves.
        let oracle = solve_q(3.0, 1e-5).unwrap();
        let coarse = solve_q(3.0, 1e-3).unwrap();
        let fine = solve_q(3.0, 5e-4).unwrap();
        let err = |p: &QProfile| {
            let ratio = (p.h / 1e-5).round() as usize;
            p.values
                .iter()
                .enumerate()
                .map(|(i, &v)| (v - oracle.values[i * ratio]).abs())
                .fold(0.0f64, f64::max)
        };
        let (e1, e2) = (err(&coarse), err(&fine));
        let ratio = e1 / e2;
        assert!(
            (3.0..5.0).contains(&ratio),
            "error ratio {ratio} not ~4 (e1={e1:.3e}, e2={e2:.3e})"
        );
    }

    #[test]
    fn limit_report_fixed_point_and_tail() {
        let constant = QProfile {
            h: 1e-3,
            values: vec![2.0; 25_001],
            left_at_one: 2.0,
        };
        assert_eq!(q_limit_report(&constant).deviation, 0.0);

        let p = solve_q(2.0, 1e-4).unwrap();
        let r = q_limit_report(&p);
        assert_abs_diff_eq!(r.deviation, (E * (E - 2.0) - 2.0).abs(), epsilon = 1e-6);
    }
}
