//! Experiment orchestration: flat-file configuration, reproducible parallel
//! replicates, artifact persistence, and the end-to-end pipeline
//! (simulate -> trace -> compare).
//!
//! Configuration is flat UTF-8 `key = value` text; unknown keys are
//! rejected. Replicate `i` draws every random decision from a stream
//! derived from `(seed, i)` (see [`crate::rng`]), so results are
//! independent of worker count and scheduling, and any replicate can be
//! reproduced in isolation.

use crate::error::{Error, Result};
use crate::genealogy::{extract_times, fdd_compare, AncestryHook, FddComparison, NodeKind, SampleTrace};
use crate::popsim::{ModelParams, Population, SnapshotRecorder};
use crate::rng;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Full experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelParams,
    /// Sample size for genealogy tracing.
    pub n_sample: usize,
    /// Backward times in theorem units (before the unit shift).
    pub times: Vec<f64>,
    pub replicates: usize,
    pub workers: usize,
    pub snapshot_dt: f64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelParams {
                n: 10_000,
                mu: 1e-4,
                s: 0.05,
                t_units: 4.0,
                seed: 1,
                ancestry_simplify_interval: 0,
            },
            n_sample: 4,
            times: vec![0.25, 0.5, 1.0],
            replicates: 100,
            workers: 1,
            snapshot_dt: 0.0, // 0 = a_N / 40
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Check every constraint; collect all violations.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.model.n < 2 {
            errs.push(format!("N: population size must be >= 2, got {}", self.model.n));
        }
        if !(self.model.mu > 0.0 && self.model.mu < self.model.s) {
            errs.push(format!(
                "mu, s: rates must satisfy 0 < mu < s, got mu={}, s={}",
                self.model.mu, self.model.s
            ));
        }
        let t_max = self.times.iter().cloned().fold(0.0f64, f64::max);
        if self.model.t_units <= t_max + 2.0 {
            errs.push(format!(
                "T, times: the sampling window needs T > t + 2 where t = max(times); \
                 got T = {} with t = {}",
                self.model.t_units, t_max
            ));
        }
        if self.times.is_empty() || self.times.iter().any(|&u| u < 0.0) {
            errs.push("times: need a non-empty list of backward times >= 0".into());
        }
        if self.n_sample < 1 {
            errs.push("n: sample size must be >= 1".into());
        }
        if self.n_sample > crate::coalescent::MAX_EXACT_N {
            errs.push(format!(
                "n: exact reference distributions cover n <= {}, got {}",
                crate::coalescent::MAX_EXACT_N,
                self.n_sample
            ));
        }
        if self.n_sample > self.model.n {
            errs.push("n: sample size exceeds the population size".into());
        }
        if self.replicates < 1 {
            errs.push("replicates: need at least 1".into());
        }
        if self.workers < 1 {
            errs.push("workers: need at least 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// Effective snapshot cadence.
    pub fn snapshot_dt(&self) -> f64 {
        if self.snapshot_dt > 0.0 {
            self.snapshot_dt
        } else {
            let scale = crate::scaling::scaling_constants(
                self.model.n as u64,
                self.model.mu,
                self.model.s,
            );
            scale.map(|s| s.a_n / 40.0).unwrap_or(1.0)
        }
    }

    /// Normalized `key = value` echo with defaults filled, keys sorted.
    pub fn normalized(&self) -> String {
        let mut s = String::new();
        let times = self
            .times
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(s, "N = {}", self.model.n);
        let _ = writeln!(s, "T = {}", self.model.t_units);
        let _ = writeln!(s, "mu = {}", self.model.mu);
        let _ = writeln!(s, "n = {}", self.n_sample);
        let _ = writeln!(s, "out = {}", self.out_dir.display());
        let _ = writeln!(s, "replicates = {}", self.replicates);
        let _ = writeln!(s, "s = {}", self.model.s);
        let _ = writeln!(s, "seed = {}", self.model.seed);
        let _ = writeln!(s, "simplify_interval = {}", self.model.ancestry_simplify_interval);
        let _ = writeln!(s, "snapshot_dt = {}", self.snapshot_dt);
        let _ = writeln!(s, "times = {times}");
        let _ = writeln!(s, "workers = {}", self.workers);
        s
    }
}

/// Parse flat `key = value` text. Unknown keys and malformed values are
/// collected and reported together.
pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, Vec<String>> {
    let mut cfg = ExperimentConfig::default();
    let mut errs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errs.push(format!("line {}: expected `key = value`, got `{raw}`", lineno + 1));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let mut bad = |what: &str| errs.push(format!("{key}: invalid value `{value}` ({what})"));
        match key {
            "N" => match value.parse() {
                Ok(v) => cfg.model.n = v,
                Err(_) => bad("positive integer"),
            },
            "mu" => match value.parse() {
                Ok(v) => cfg.model.mu = v,
                Err(_) => bad("real"),
            },
            "s" => match value.parse() {
                Ok(v) => cfg.model.s = v,
                Err(_) => bad("real"),
            },
            "T" => match value.parse() {
                Ok(v) => cfg.model.t_units = v,
                Err(_) => bad("real"),
            },
            "seed" => match value.parse() {
                Ok(v) => cfg.model.seed = v,
                Err(_) => bad("u64"),
            },
            "snapshot_dt" => match value.parse() {
                Ok(v) => cfg.snapshot_dt = v,
                Err(_) => bad("real"),
            },
            "simplify_interval" => match value.parse() {
                Ok(v) => cfg.model.ancestry_simplify_interval = v,
                Err(_) => bad("u64"),
            },
            "n" => match value.parse() {
                Ok(v) => cfg.n_sample = v,
                Err(_) => bad("positive integer"),
            },
            "times" => {
                let parsed: std::result::Result<Vec<f64>, _> =
                    value.split(',').map(|p| p.trim().parse()).collect();
                match parsed {
                    Ok(v) => cfg.times = v,
                    Err(_) => bad("comma-separated reals"),
                }
            }
            "replicates" => match value.parse() {
                Ok(v) => cfg.replicates = v,
                Err(_) => bad("positive integer"),
            },
            "workers" => match value.parse() {
                Ok(v) => cfg.workers = v,
                Err(_) => bad("positive integer"),
            },
            "out" => cfg.out_dir = PathBuf::from(value),
            _ => errs.push(format!("{key}: unknown key")),
        }
    }
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(errs)
    }
}

/// Parse and validate a configuration file.
pub fn validate_config(path: &Path) -> std::result::Result<ExperimentConfig, Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| vec![format!("{}: {e}", path.display())])?;
    let cfg = parse_config(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Per-replicate outcome recorded in the manifest.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ReplicateStatus {
    pub index: usize,
    pub seed: u64,
    pub ok: bool,
    pub detail: String,
    pub events: u64,
    pub clamp_events: u64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub a_n: f64,
    pub k_n: f64,
    pub wall_seconds: f64,
    pub replicates: Vec<ReplicateStatus>,
}

/// FNV-1a over the normalized configuration text.
pub fn config_hash(normalized: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in normalized.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    format!("{h:016x}")
}

/// Everything one replicate produces.
pub struct ReplicateResult {
    pub index: usize,
    pub trace: SampleTrace,
    pub status: ReplicateStatus,
}

/// Run one replicate: forward simulation with ancestry, sampling, tracing,
/// artifact files under `rep_<index>/`.
pub fn run_replicate(
    cfg: &ExperimentConfig,
    index: usize,
    dir: Option<&Path>,
) -> Result<ReplicateResult> {
    let seed = rng::derive_seed(cfg.model.seed, index as u64);
    let mut stream = rng::stream(cfg.model.seed, index as u64);
    let scale = crate::scaling::scaling_constants(cfg.model.n as u64, cfg.model.mu, cfg.model.s)?;
    let horizon = scale.a_n * cfg.model.t_units;

    let mut pop = Population::new(cfg.model.clone())?;
    let mut hooks = (
        SnapshotRecorder::new(cfg.snapshot_dt()),
        AncestryHook::new(cfg.model.n, cfg.model.ancestry_simplify_interval),
    );
    let summary = pop.run_until(horizon, &mut stream, &mut hooks)?;
    let (snaps, mut ancestry) = (hooks.0, hooks.1);

    ancestry.store.pin_samples(&pop.state, cfg.n_sample, &mut stream)?;
    ancestry.store.simplify();
    let trace = extract_times(&ancestry.store);

    if let Some(dir) = dir {
        let rep_dir = dir.join(format!("rep_{index}"));
        std::fs::create_dir_all(&rep_dir)?;
        write_snapshots(&rep_dir.join("snapshots.csv"), &snaps)?;
        write_tau(&rep_dir.join("tau.csv"), pop.tau())?;
        write_ancestry(&rep_dir.join("ancestry.csv"), &ancestry.store)?;
        write_samples(&rep_dir.join("samples.txt"), ancestry.store.pinned())?;
        write_trace(&rep_dir.join("trace.csv"), &trace)?;
    }

    Ok(ReplicateResult {
        index,
        trace,
        status: ReplicateStatus {
            index,
            seed,
            ok: true,
            detail: String::new(),
            events: summary.events,
            clamp_events: summary.clamp_events,
        },
    })
}

/// Run the full experiment: replicates in a worker pool, aggregation in
/// replicate-index order, comparison output, and a manifest. Failed
/// replicates are recorded and skipped, never abort the batch.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate().map_err(|errs| Error::Config(errs.join("; ")))?;
    let start = std::time::Instant::now();
    let scale = crate::scaling::scaling_constants(cfg.model.n as u64, cfg.model.mu, cfg.model.s)?;
    std::fs::create_dir_all(&cfg.out_dir)?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<ReplicateResult>>> =
        Mutex::new((0..cfg.replicates).map(|_| None).collect());
    let failures: Mutex<Vec<ReplicateStatus>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..cfg.workers.min(cfg.replicates) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cfg.replicates {
                    break;
                }
                match run_replicate(cfg, i, Some(&cfg.out_dir)) {
                    Ok(res) => results.lock().unwrap()[i] = Some(res),
                    Err(e) => failures.lock().unwrap().push(ReplicateStatus {
                        index: i,
                        seed: rng::derive_seed(cfg.model.seed, i as u64),
                        ok: false,
                        detail: e.to_string(),
                        events: 0,
                        clamp_events: 0,
                    }),
                }
            });
        }
    });

    let results = results.into_inner().unwrap();
    let mut statuses: Vec<ReplicateStatus> = Vec::with_capacity(cfg.replicates);
    let mut traces: Vec<SampleTrace> = Vec::new();
    for slot in results.into_iter() {
        if let Some(res) = slot {
            statuses.push(res.status);
            traces.push(res.trace);
        }
    }
    let mut failures = failures.into_inner().unwrap();
    statuses.append(&mut failures);
    statuses.sort_by_key(|s| s.index);

    // comparison against the exact coalescent law, deterministic stream
    let shifted: Vec<f64> = cfg.times.iter().map(|u| u + 1.0).collect();
    let mut agg_rng = rng::stream(cfg.model.seed, u64::MAX);
    let comparison = if traces.is_empty() {
        None
    } else {
        Some(fdd_compare(&traces, cfg.n_sample, &shifted, scale.a_n, &mut agg_rng)?)
    };
    if let Some(cmp) = &comparison {
        write_comparison(&cfg.out_dir.join("compare.csv"), &cfg.times, cmp)?;
    }

    let normalized = cfg.normalized();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(&normalized),
        config: normalized,
        master_seed: cfg.model.seed,
        a_n: scale.a_n,
        k_n: scale.k_n,
        wall_seconds: start.elapsed().as_secs_f64(),
        replicates: statuses,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Internal(format!("manifest serialization: {e}")))?;
    std::fs::write(cfg.out_dir.join("manifest.json"), manifest_json)?;

    Ok(ExperimentOutput { manifest, traces, comparison })
}

pub struct ExperimentOutput {
    pub manifest: Manifest,
    pub traces: Vec<SampleTrace>,
    pub comparison: Option<FddComparison>,
}

fn write_snapshots(path: &Path, snaps: &SnapshotRecorder) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "t,j,X_j")?;
    for row in &snaps.rows {
        for &(j, c) in &row.counts {
            writeln!(f, "{},{},{}", row.t, j, c)?;
        }
    }
    Ok(())
}

fn write_tau(path: &Path, tau: &crate::popsim::TauRecord) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "j,tau_j")?;
    for (j, t, _) in tau.iter() {
        writeln!(f, "{j},{t}")?;
    }
    Ok(())
}

fn write_ancestry(path: &Path, store: &crate::genealogy::AncestryStore) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "node_id,parent_id,time,type,kind")?;
    for id in 0..store.len() as u32 {
        let parent = store
            .node_parent(id)
            .map(|p| p.to_string())
            .unwrap_or_default();
        let kind = match store.node_kind(id) {
            NodeKind::Root => "root",
            NodeKind::Birth => "birth",
            NodeKind::Mutation => "mutation",
        };
        writeln!(f, "{id},{parent},{},{},{kind}", store.node_time(id), store.node_type(id))?;
    }
    Ok(())
}

fn write_samples(path: &Path, pinned: &[u32]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for node in pinned {
        writeln!(f, "{node}")?;
    }
    Ok(())
}

fn write_trace(path: &Path, trace: &SampleTrace) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "record,i,j,value")?;
    writeln!(f, "sampling_time,0,0,{}", trace.sampling_time)?;
    for i in 0..trace.n {
        for j in 0..trace.n {
            writeln!(f, "T,{},{},{}", i + 1, j + 1, trace.coalescence[i][j])?;
        }
    }
    for (i, times) in trace.mutation_times.iter().enumerate() {
        for (k, t) in times.iter().enumerate() {
            writeln!(f, "V,{},{},{t}", i + 1, k + 1)?;
        }
    }
    Ok(())
}

/// Read a trace written by [`run_replicate`].
pub fn read_trace(path: &Path) -> Result<SampleTrace> {
    let text = std::fs::read_to_string(path)?;
    let mut sampling_time = f64::NAN;
    let mut t_entries: Vec<(usize, usize, f64)> = Vec::new();
    let mut v_entries: Vec<(usize, usize, f64)> = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Argument(format!(
                "{}: line {} is not a 4-column record",
                path.display(),
                lineno + 1
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            match s {
                "-inf" => Ok(f64::NEG_INFINITY),
                other => other.parse().map_err(|e| {
                    Error::Argument(format!("{}: bad value {other}: {e}", path.display()))
                }),
            }
        };
        match parts[0] {
            "sampling_time" => sampling_time = parse(parts[3])?,
            "T" => t_entries.push((
                parts[1].parse().unwrap_or(0),
                parts[2].parse().unwrap_or(0),
                parse(parts[3])?,
            )),
            "V" => v_entries.push((
                parts[1].parse().unwrap_or(0),
                parts[2].parse().unwrap_or(0),
                parse(parts[3])?,
            )),
            other => {
                return Err(Error::Argument(format!(
                    "{}: unknown record kind {other}",
                    path.display()
                )))
            }
        }
    }
    let n = t_entries.iter().map(|&(i, _, _)| i).max().unwrap_or(0);
    let mut coalescence = vec![vec![f64::NEG_INFINITY; n]; n];
    for (i, j, v) in t_entries {
        coalescence[i - 1][j - 1] = v;
    }
    let mut mutation_times = vec![Vec::new(); n];
    for (i, _k, v) in v_entries {
        mutation_times[i - 1].push(v);
    }
    Ok(SampleTrace { n, sampling_time, coalescence, mutation_times })
}

fn write_comparison(path: &Path, times_unshifted: &[f64], cmp: &FddComparison) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "u,tv_distance,ci_low,ci_high,singleton_prob")?;
    for (k, u) in times_unshifted.iter().enumerate() {
        writeln!(
            f,
            "{u},{},{},{},{}",
            cmp.tv_distance[k], cmp.tv_ci[k].0, cmp.tv_ci[k].1, cmp.singleton_prob
        )?;
    }
    Ok(())
}

/// Write the comparison CSV for externally aggregated traces (the
/// `compare` subcommand).
pub fn compare_traces_dir(
    dir: &Path,
    n: usize,
    times_unshifted: &[f64],
    a_n: f64,
    seed: u64,
    out: &Path,
) -> Result<FddComparison> {
    let mut traces = Vec::new();
    let mut idx = 0usize;
    loop {
        let p = dir.join(format!("rep_{idx}")).join("trace.csv");
        if !p.exists() {
            break;
        }
        traces.push(read_trace(&p)?);
        idx += 1;
    }
    if traces.is_empty() {
        return Err(Error::Argument(format!(
            "no rep_*/trace.csv files under {}",
            dir.display()
        )));
    }
    let shifted: Vec<f64> = times_unshifted.iter().map(|u| u + 1.0).collect();
    let mut rng = rng::stream(seed, u64::MAX);
    let cmp = fdd_compare(&traces, n, &shifted, a_n, &mut rng)?;
    write_comparison(out, times_unshifted, &cmp)?;
    Ok(cmp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.model.n = 300;
        cfg.model.mu = 2e-3;
        cfg.model.s = 0.1;
        cfg.model.t_units = 3.5;
        cfg.model.seed = 99;
        cfg.n_sample = 3;
        cfg.times = vec![0.5, 1.0];
        cfg.replicates = 3;
        cfg.workers = 2;
        cfg.out_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn config_rejects_violations_by_name() {
        let text = "N = 100\nmu = 0.2\ns = 0.1\nT = 4\n";
        let cfg = parse_config(text).unwrap();
        let errs = cfg.validate().unwrap_err();
        assert!(errs.iter().any(|e| e.contains("mu") && e.contains("s")));

        let text = "N = 100\nmu = 0.001\ns = 0.1\nT = 2\ntimes = 1.0\n";
        let cfg = parse_config(text).unwrap();
        let errs = cfg.validate().unwrap_err();
        assert!(errs.iter().any(|e| e.contains("T > t + 2")), "{errs:?}");
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let errs = parse_config("N = 100\nbogus = 3\n").unwrap_err();
        assert!(errs.iter().any(|e| e.contains("bogus")));
    }

    #[test]
    fn config_normalizes_with_defaults() {
        let cfg = parse_config("N = 5000\nmu = 1e-4\ns = 0.05\nT = 4\nseed = 7\n").unwrap();
        let echo = cfg.normalized();
        assert!(echo.contains("N = 5000"));
        assert!(echo.contains("replicates = 100"));
        let reparsed = parse_config(&echo).unwrap();
        assert_eq!(reparsed, cfg);
    }

    #[test]
    fn experiment_produces_artifacts_and_reruns_identically() {
        let dir = std::env::temp_dir().join(format!("coalsim-harness-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let cfg = tiny_config(&dir.join("a"));
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.manifest.replicates.len(), 3);
        assert!(out.manifest.replicates.iter().all(|r| r.ok));
        for i in 0..3 {
            for file in ["snapshots.csv", "tau.csv", "ancestry.csv", "samples.txt", "trace.csv"] {
                assert!(
                    cfg.out_dir.join(format!("rep_{i}")).join(file).exists(),
                    "missing {file} for rep {i}"
                );
            }
        }
        assert!(cfg.out_dir.join("manifest.json").exists());
        assert!(cfg.out_dir.join("compare.csv").exists());

        // byte-identical rerun, independent of worker count
        let mut cfg2 = tiny_config(&dir.join("b"));
        cfg2.workers = 1;
        run_experiment(&cfg2).unwrap();
        for i in 0..3 {
            for file in ["snapshots.csv", "tau.csv", "ancestry.csv", "samples.txt", "trace.csv"] {
                let a = std::fs::read(cfg.out_dir.join(format!("rep_{i}")).join(file)).unwrap();
                let b = std::fs::read(cfg2.out_dir.join(format!("rep_{i}")).join(file)).unwrap();
                assert_eq!(a, b, "{file} differs for rep {i}");
            }
        }

        // traces round-trip through the CSV form
        let trace = read_trace(&cfg.out_dir.join("rep_0").join("trace.csv")).unwrap();
        assert_eq!(trace.n, out.traces[0].n);
        assert_eq!(trace.coalescence, out.traces[0].coalescence);
        assert_eq!(trace.mutation_times, out.traces[0].mutation_times);

        let _ = std::fs::remove_dir_all(&dir);
    }
}
