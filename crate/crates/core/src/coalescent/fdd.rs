//! Exact finite-dimensional distributions of the Bolthausen-Sznitman
//! coalescent on small sample sizes.
//!
//! The partition-valued chain on n labels has Bell(n) states (203 at n = 6).
//! The distribution at each requested time is obtained by uniformization:
//! with a uniformization rate no smaller than every exit rate, the law at
//! time t is a Poisson mixture of powers of the discrete jump kernel. The
//! Poisson series is truncated once its remaining tail mass drops below
//! 1e-12 and the result renormalized, keeping the truncation error at least
//! two orders below the 1e-10 documented accuracy.

use super::partition::{enumerate_partitions, merge_blocks, Partition};
use super::rates::{merger_rate, ratio_to_f64, total_merger_rate};
use crate::error::{Error, Result};
use std::collections::HashMap;

/// Largest n with exact reference distributions.
pub const MAX_EXACT_N: usize = 6;

const TAIL_MASS: f64 = 1e-12;

/// Exact law of the coalescent state at a set of times.
#[derive(Debug, Clone)]
pub struct FddResult {
    /// All partitions of `{1..n}`, fixing the index order of the vectors.
    pub states: Vec<Partition>,
    /// `probabilities[k][i]` = P(state `i` at `times[k]`), each summing to 1.
    pub probabilities: Vec<Vec<f64>>,
    pub times: Vec<f64>,
}

impl FddResult {
    pub fn index_of(&self, p: &Partition) -> Option<usize> {
        self.states.iter().position(|s| s == p)
    }
}

/// Distribution of the coalescent at each time, started from singletons.
pub fn bs_exact_fdd(n: usize, times: &[f64]) -> Result<FddResult> {
    if n == 0 || n > MAX_EXACT_N {
        return Err(Error::Capability(format!(
            "exact distributions cover 1 <= n <= {MAX_EXACT_N}, got {n}"
        )));
    }
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::Argument("times must be finite and >= 0".into()));
    }
    let states = enumerate_partitions(n);
    let index: HashMap<Vec<u8>, usize> =
        states.iter().enumerate().map(|(i, p)| (p.rgs(), i)).collect();
    let m = states.len();

    // Jump kernel of the uniformized chain: from each state, mass moves to
    // each coarsening reachable by one merger, plus a self-loop making up
    // the difference between the exit rate and the uniformization rate.
    let unif_rate = ratio_to_f64(&total_merger_rate(n.max(2) as u32)?).max(1e-9);
    let mut kernel = vec![vec![0.0f64; m]; m]; // kernel[from][to]
    for (i, p) in states.iter().enumerate() {
        let b = p.num_blocks();
        if b < 2 {
            kernel[i][i] = 1.0;
            continue;
        }
        let mut exit = 0.0;
        for subset in subsets_of_size_at_least_two(b) {
            let rate = ratio_to_f64(&merger_rate(b as u32, subset.len() as u32)?);
            let target = merge_blocks(p, &subset)?;
            let j = index[&target.rgs()];
            kernel[i][j] += rate / unif_rate;
            exit += rate;
        }
        kernel[i][i] += 1.0 - exit / unif_rate;
    }

    let mut probabilities = Vec::with_capacity(times.len());
    for &t in times {
        let lam = unif_rate * t;
        // pi = sum_k Pois(lam; k) * pi0 K^k, truncated at tail < TAIL_MASS.
        let mut vk = vec![0.0f64; m];
        vk[0] = 1.0; // singletons come first in enumeration order
        debug_assert!(states[0].is_singletons());
        let mut acc = vec![0.0f64; m];
        let mut pois = (-lam).exp();
        let mut cum = pois;
        for (a, v) in acc.iter_mut().zip(vk.iter()) {
            *a = pois * v;
        }
        let mut k = 0u64;
        while 1.0 - cum > TAIL_MASS {
            k += 1;
            vk = apply_kernel(&kernel, &vk);
            pois *= lam / k as f64;
            cum += pois;
            for (a, v) in acc.iter_mut().zip(vk.iter()) {
                *a += pois * v;
            }
            if k > 100_000 {
                return Err(Error::Internal("uniformization failed to converge".into()));
            }
        }
        let total: f64 = acc.iter().sum();
        for a in acc.iter_mut() {
            *a /= total;
        }
        probabilities.push(acc);
    }

    Ok(FddResult { states, probabilities, times: times.to_vec() })
}

fn apply_kernel(kernel: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let m = v.len();
    let mut out = vec![0.0f64; m];
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        for (j, &kij) in kernel[i].iter().enumerate() {
            out[j] += vi * kij;
        }
    }
    out
}

/// All subsets of `{0..b-1}` with at least two elements, as index lists.
fn subsets_of_size_at_least_two(b: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 0u32..(1 << b) {
        if mask.count_ones() >= 2 {
            out.push((0..b).filter(|i| mask & (1 << i) != 0).collect());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_lineages_closed_form() {
        let r = bs_exact_fdd(2, &[0.0, 0.3, 1.0, 2.5]).unwrap();
        let singles = r.index_of(&Partition::singletons(2)).unwrap();
        for (k, &t) in r.times.iter().enumerate() {
            assert_abs_diff_eq!(r.probabilities[k][singles], (-t).exp(), epsilon = 1e-10);
            let sum: f64 = r.probabilities[k].iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn everything_merges_eventually() {
        let r = bs_exact_fdd(3, &[60.0]).unwrap();
        let merged = r
            .index_of(&Partition::from_blocks(3, vec![vec![1, 2, 3]]).unwrap())
            .unwrap();
        assert!(r.probabilities[0][merged] > 1.0 - 1e-9);
    }

    #[test]
    fn rejects_large_n() {
        assert!(bs_exact_fdd(7, &[1.0]).is_err());
    }

    #[test]
    fn n_one_is_trivial() {
        let r = bs_exact_fdd(1, &[5.0]).unwrap();
        assert_eq!(r.states.len(), 1);
        assert_abs_diff_eq!(r.probabilities[0][0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn consistency_under_marginalization() {
        // Restricting the n=3 law to labels {1,2} must reproduce the n=2 law.
        let t = 0.7;
        let r3 = bs_exact_fdd(3, &[t]).unwrap();
        let r2 = bs_exact_fdd(2, &[t]).unwrap();
        let mut p_12_together = 0.0;
        for (i, p) in r3.states.iter().enumerate() {
            let together = p
                .blocks()
                .iter()
                .any(|b| b.contains(&1) && b.contains(&2));
            if together {
                p_12_together += r3.probabilities[0][i];
            }
        }
        let merged2 = 1.0 - r2.probabilities[0][r2.index_of(&Partition::singletons(2)).unwrap()];
        assert_abs_diff_eq!(p_12_together, merged2, epsilon = 1e-9);
    }
}
