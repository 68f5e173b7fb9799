//! Exact Bolthausen-Sznitman coalescent machinery: partition algebra,
//! merger rates as exact rationals, two independent samplers, and exact
//! finite-dimensional distributions for small sample sizes.

mod fdd;
mod partition;
mod rates;
mod sampler;

pub use fdd::{bs_exact_fdd, FddResult, MAX_EXACT_N};
pub use partition::{enumerate_partitions, merge_blocks, Partition};
pub use rates::{merger_rate, total_merger_rate, Rational};
pub use sampler::{sample_bs_markov, sample_bs_poisson, CoalescentTrajectory, YMergerRateEstimate, estimate_y_merger_rate};
