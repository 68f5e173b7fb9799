//! Simulation and verification suite for a fixed-size population model with
//! beneficial mutations and fitness-proportional reproduction.
//!
//! The crate has three layers:
//!
//! * forward machinery — an exact event-driven simulator of the population
//!   model ([`popsim`]) with ancestry recording and lineage tracing
//!   ([`genealogy`]);
//! * reference machinery — exact Bolthausen-Sznitman coalescent rates,
//!   samplers, and finite-dimensional distributions ([`coalescent`]), the
//!   delay-equation front profile ([`scaling`]), and birth-death branching
//!   process facts and couplings ([`branching`]);
//! * verification — statistical comparisons connecting the two
//!   ([`diagnostics`], [`genealogy::fdd_compare`]) and experiment
//!   orchestration ([`harness`]).

pub mod branching;
pub mod coalescent;
pub mod diagnostics;
pub mod error;
pub mod genealogy;
pub mod harness;
pub mod popsim;
pub mod rng;
pub mod scaling;

pub use error::{Error, Result};
