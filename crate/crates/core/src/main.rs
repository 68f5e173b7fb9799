//! Command-line front end: forward simulation, coalescent sampling,
//! genealogy comparison, the delay-equation solver, branching-process
//! verification presets, and post-hoc diagnostics.

use clap::{Args, Parser, Subcommand};
use coalsim::branching::{
    family_tail_curve, run_coupling, survival_prob, synthesize_feed, w_limit_test, CouplingBands,
    SyntheticFeedConfig,
};
use coalsim::coalescent::{sample_bs_markov, sample_bs_poisson};
use coalsim::diagnostics::{
    front_constants, growth_check, martingale_check, martingale_path_value, q_profile_check,
    tau_spacing_in_band, FrontConfig, GrowthCheck, MartingaleRecorder,
};
use coalsim::harness::{
    compare_traces_dir, parse_config, run_experiment, validate_config, ExperimentConfig, Manifest,
};
use coalsim::popsim::{Population, SnapshotRecorder, SnapshotRow};
use coalsim::scaling::{q_limit_report, scaling_constants, solve_q};
use coalsim::{rng, Error};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "coalsim",
    about = "Population-model simulation verified against the Bolthausen-Sznitman coalescent",
    version
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GlobalOpts {
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker-thread count override.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the front-profile delay equation and write a t,q table.
    Qsolve {
        #[arg(long)]
        tmax: f64,
        #[arg(long)]
        step: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample Bolthausen-Sznitman coalescent trajectories.
    CoalescentSample {
        #[arg(long)]
        n: usize,
        #[arg(long, value_parser = ["markov", "poisson"])]
        method: String,
        #[arg(long)]
        horizon: f64,
        #[arg(long)]
        reps: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forward-simulate the population model from a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_prefix: Option<PathBuf>,
    },
    /// Compare traced partitions in an experiment directory against the
    /// exact coalescent law.
    Compare {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        n: usize,
        /// Backward times (unshifted theorem u values), comma separated.
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Branching-process verification presets.
    Branching {
        #[arg(long, value_parser = ["survival", "wlimit", "coupling", "tail"])]
        preset: String,
        /// Flat key = value parameter file for the preset.
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        reps: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Post-hoc diagnostics over an experiment directory.
    Diagnose {
        #[arg(long, value_parser = ["qprofile", "growth", "martingale", "front"])]
        which: String,
        #[arg(long, name = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline: simulate -> trace -> compare, with a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Verify exact per-replicate invariants and exit 3 on failure.
        #[arg(long)]
        check: bool,
    },
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Argument(_) => 1,
                _ => 2,
            }
        }
    });
}

fn dispatch(cli: Cli) -> coalsim::Result<i32> {
    match cli.command {
        Command::Qsolve { tmax, step, out } => {
            let profile = solve_q(tmax, step)?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(&out)?);
            writeln!(f, "t,q")?;
            let jump = (1.0 / profile.h).round() as usize;
            for (i, &q) in profile.values.iter().enumerate() {
                let t = i as f64 * profile.h;
                if i == jump {
                    // the jump point carries both one-sided values
                    writeln!(f, "{t},{}", profile.left_at_one)?;
                }
                writeln!(f, "{t},{q}")?;
            }
            let report = q_limit_report(&profile);
            eprintln!(
                "q({}) = {}, |q - 2| = {}",
                report.t_last, report.q_last, report.deviation
            );
            Ok(0)
        }
        Command::CoalescentSample { n, method, horizon, reps, seed, out } => {
            let seed = cli.global.seed.unwrap_or(seed);
            let mut f = std::io::BufWriter::new(std::fs::File::create(&out)?);
            writeln!(f, "rep,event_time,partition")?;
            for rep in 0..reps {
                let mut stream = rng::stream(seed, rep);
                let traj = match method.as_str() {
                    "markov" => sample_bs_markov(n, horizon, &mut stream)?,
                    _ => sample_bs_poisson(n, horizon, &mut stream)?,
                };
                for (t, p) in &traj.events {
                    writeln!(f, "{rep},{t},{p}")?;
                }
            }
            Ok(0)
        }
        Command::Simulate { config, out_prefix } => {
            let mut cfg = load_config(&config, &cli.global)?;
            if let Some(prefix) = out_prefix {
                cfg.out_dir = prefix;
            }
            // single-replicate forward run with artifacts
            cfg.replicates = 1;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let out = run_experiment(&cfg)?;
            let ok = out.manifest.replicates.iter().filter(|r| r.ok).count();
            eprintln!(
                "simulated {ok} replicate(s) in {:.2}s -> {}",
                out.manifest.wall_seconds,
                cfg.out_dir.display()
            );
            Ok(0)
        }
        Command::Compare { traces, n, times, out } => {
            let manifest = read_manifest(&traces.join("manifest.json"))?;
            let seed = cli.global.seed.unwrap_or(manifest.master_seed);
            let cmp = compare_traces_dir(&traces, n, &times, manifest.a_n, seed, &out)?;
            for w in &cmp.warnings {
                eprintln!("warning: {w}");
            }
            Ok(0)
        }
        Command::Branching { preset, params, reps, seed, out } => {
            let seed = cli.global.seed.unwrap_or(seed);
            run_branching_preset(&preset, &params, reps, seed, &out)?;
            Ok(0)
        }
        Command::Diagnose { which, input, out } => {
            run_diagnose(&which, &input, &out)?;
            Ok(0)
        }
        Command::Run { config, check } => {
            let cfg = load_config(&config, &cli.global)?;
            let out = run_experiment(&cfg)?;
            let failed = out.manifest.replicates.iter().filter(|r| !r.ok).count();
            eprintln!(
                "{} replicates ({failed} failed), {:.2}s -> {}",
                out.manifest.replicates.len(),
                out.manifest.wall_seconds,
                cfg.out_dir.display()
            );
            if let Some(cmp) = &out.comparison {
                for (k, u) in cfg.times.iter().enumerate() {
                    eprintln!(
                        "u = {u}: TV = {:.4} [{:.4}, {:.4}], P(singletons at a_N) = {:.4}",
                        cmp.tv_distance[k], cmp.tv_ci[k].0, cmp.tv_ci[k].1, cmp.singleton_prob
                    );
                }
            }
            if check {
                let problems = check_invariants(&out.traces, cfg.model.n);
                if failed > 0 || !problems.is_empty() {
                    for p in &problems {
                        eprintln!("check failed: {p}");
                    }
                    return Ok(3);
                }
                eprintln!("all checks passed");
            }
            Ok(0)
        }
    }
}

fn load_config(path: &Path, global: &GlobalOpts) -> coalsim::Result<ExperimentConfig> {
    let mut cfg = validate_config(path).map_err(|errs| Error::Config(errs.join("; ")))?;
    if let Some(seed) = global.seed {
        cfg.model.seed = seed;
    }
    if let Some(workers) = global.workers {
        cfg.workers = workers;
    }
    if let Some(out) = &global.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate().map_err(|errs| Error::Config(errs.join("; ")))?;
    Ok(cfg)
}

fn read_manifest(path: &Path) -> coalsim::Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Argument(format!("{}: {e}", path.display())))
}

/// Exact per-replicate invariants for `run --check`: partitions must
/// coarsen as backward time grows and coalescence times must be
/// ultrametric-consistent.
fn check_invariants(traces: &[coalsim::genealogy::SampleTrace], _n: usize) -> Vec<String> {
    let mut problems = Vec::new();
    for (idx, tr) in traces.iter().enumerate() {
        for i in 0..tr.n {
            for j in 0..tr.n {
                if (tr.coalescence[i][j] - tr.coalescence[j][i]).abs() > 0.0 {
                    problems.push(format!("replicate {idx}: T matrix not symmetric"));
                }
                for k in 0..tr.n {
                    let lhs = tr.coalescence[i][k];
                    let rhs = tr.coalescence[i][j].min(tr.coalescence[j][k]);
                    if lhs < rhs {
                        problems.push(format!(
                            "replicate {idx}: ultrametric violation at ({i},{j},{k})"
                        ));
                    }
                }
            }
        }
        let mut prev = tr.partition_at_forward(tr.sampling_time);
        let steps = 16;
        for step in 1..=steps {
            let t = tr.sampling_time * (1.0 - step as f64 / steps as f64);
            let p = tr.partition_at_forward(t);
            if !prev.refines(&p) {
                problems.push(format!("replicate {idx}: partitions fail to coarsen"));
            }
            prev = p;
        }
    }
    problems
}

fn parse_flat_params(path: &Path) -> coalsim::Result<std::collections::BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = std::collections::BTreeMap::new();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected `key = value`, got `{raw}`")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn need_f64(map: &std::collections::BTreeMap<String, String>, key: &str) -> coalsim::Result<f64> {
    map.get(key)
        .ok_or_else(|| Error::Config(format!("missing key {key}")))?
        .parse()
        .map_err(|e| Error::Config(format!("{key}: {e}")))
}

fn run_branching_preset(
    preset: &str,
    params: &Path,
    reps: u64,
    seed: u64,
    out: &Path,
) -> coalsim::Result<()> {
    let map = parse_flat_params(params)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(out)?);
    let mut stream = rng::stream(seed, 0);
    match preset {
        "survival" => {
            let (lambda, nu, t) =
                (need_f64(&map, "lambda")?, need_f64(&map, "nu")?, need_f64(&map, "t")?);
            let p = survival_prob(lambda, nu, t)?;
            let mut alive = 0u64;
            for _ in 0..reps {
                let (sizes, _) = coalsim::branching::simulate_bd_checkpoints(
                    &coalsim::branching::BdParams::plain(lambda, nu),
                    1,
                    &[t],
                    coalsim::branching::DEFAULT_POP_CAP,
                    &mut stream,
                )?;
                alive += (sizes[0] > 0) as u64;
            }
            writeln!(f, "lambda,nu,t,survival_formula,survival_empirical,reps")?;
            writeln!(f, "{lambda},{nu},{t},{p},{},{reps}", alive as f64 / reps as f64)?;
        }
        "wlimit" => {
            let (lambda, nu, t_large) =
                (need_f64(&map, "lambda")?, need_f64(&map, "nu")?, need_f64(&map, "t_large")?);
            let report = w_limit_test(lambda, nu, t_large, reps, &mut stream)?;
            writeln!(f, "metric,value")?;
            writeln!(f, "survivors,{}", report.survivors)?;
            writeln!(f, "ks_statistic,{}", report.ks_statistic)?;
            writeln!(f, "ks_p_value,{}", report.ks_p_value)?;
            writeln!(f, "mean_w,{}", report.mean_w)?;
            writeln!(f, "mean_w_se,{}", report.mean_w_se)?;
            for c in &report.deviation_checks {
                writeln!(f, "deviation_t{}_eta{},{} (bound {})", c.t, c.eta, c.observed_freq, c.bound)?;
            }
        }
        "coupling" => {
            let bands = CouplingBands {
                delta: need_f64(&map, "delta")?,
                c4: need_f64(&map, "c4")?,
                q: need_f64(&map, "q")?,
                s: need_f64(&map, "s")?,
                mu: need_f64(&map, "mu")?,
                cap: need_f64(&map, "cap")? as u64,
            };
            let cfg = SyntheticFeedConfig {
                horizon: need_f64(&map, "horizon")?,
                immigration_cutoff: need_f64(&map, "cutoff")?,
                imm_amp: need_f64(&map, "imm_amp")?,
                imm_growth: need_f64(&map, "imm_growth")?,
                pure_birth: need_f64(&map, "pure_birth")?,
                pure_death: need_f64(&map, "pure_death")?,
                pair: need_f64(&map, "pair")?,
            };
            writeln!(f, "rep,kappa,events,violations,final_minus,final_plus,flagged")?;
            for rep in 0..reps {
                let mut s = rng::stream(seed, rep);
                let feed = synthesize_feed(&cfg, &mut s);
                match run_coupling(&feed, &bands, feed.horizon, &mut s) {
                    Ok(run) => writeln!(
                        f,
                        "{rep},{},{},{},{},{},0",
                        run.kappa,
                        run.series.len(),
                        run.sandwich_violations,
                        run.final_minus,
                        run.final_plus
                    )?,
                    Err(Error::CouplingInvalid(_)) => writeln!(f, "{rep},,,,,,1")?,
                    Err(e) => return Err(e),
                }
            }
        }
        "tail" => {
            let (q, s, b) = (need_f64(&map, "q")?, need_f64(&map, "s")?, need_f64(&map, "b")?);
            let xs: Vec<f64> = map
                .get("x")
                .ok_or_else(|| Error::Config("missing key x".into()))?
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("x: {e}")))?;
            let report = family_tail_curve(q, s, b, &xs, reps, &mut stream)?;
            writeln!(f, "x,frequency,std_error,reference,count")?;
            for est in &report.estimates {
                writeln!(
                    f,
                    "{},{},{},{},{}",
                    est.x, est.frequency, est.std_error, est.reference, est.exceed_count
                )?;
            }
        }
        other => return Err(Error::Config(format!("unknown preset {other}"))),
    }
    Ok(())
}

fn read_snapshots(path: &Path) -> coalsim::Result<Vec<SnapshotRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<SnapshotRow> = Vec::new();
    for line in text.lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            continue;
        }
        let t: f64 = parts[0].parse().map_err(|_| Error::Argument("bad snapshot time".into()))?;
        let j: u32 = parts[1].parse().map_err(|_| Error::Argument("bad type".into()))?;
        let c: u32 = parts[2].parse().map_err(|_| Error::Argument("bad count".into()))?;
        match rows.last_mut() {
            Some(row) if row.t == t => row.counts.push((j, c)),
            _ => rows.push(SnapshotRow { t, counts: vec![(j, c)] }),
        }
    }
    Ok(rows)
}

fn run_diagnose(which: &str, input: &Path, out: &Path) -> coalsim::Result<()> {
    let manifest = read_manifest(&input.join("manifest.json"))?;
    let cfg = parse_config(&manifest.config).map_err(|e| Error::Config(e.join("; ")))?;
    let scale = scaling_constants(cfg.model.n as u64, cfg.model.mu, cfg.model.s)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(out)?);
    match which {
        "qprofile" => {
            let profile = solve_q(cfg.model.t_units.max(2.0), 1e-4)?;
            writeln!(f, "replicate,sup_deviation,points")?;
            let set = [(0.2, 0.9), (1.1, (cfg.model.t_units - 0.1).max(1.2))];
            for status in manifest.replicates.iter().filter(|r| r.ok) {
                let rows =
                    read_snapshots(&input.join(format!("rep_{}", status.index)).join("snapshots.csv"))?;
                let dev = q_profile_check(&rows, &scale, &profile, &set)?;
                writeln!(f, "{},{},{}", status.index, dev.sup_deviation, dev.points)?;
            }
        }
        "growth" => {
            writeln!(f, "replicate,j,points,slope,slope_target,intercept,intercept_target")?;
            for status in manifest.replicates.iter().filter(|r| r.ok) {
                // re-simulate deterministically to recover tau and M(tau)
                let (pop, snaps) = resimulate(&cfg, status.index, scale.a_n)?;
                let front = front_constants(pop.tau(), &scale, cfg.model.s, &FrontConfig::default());
                for e in &front.per_type {
                    match growth_check(&snaps.rows, pop.tau(), e.j, cfg.model.s, cfg.model.mu, e.q_j)
                    {
                        GrowthCheck::Fits { lower, upper } => {
                            writeln!(
                                f,
                                "{},{},{},{},{},{},{}",
                                status.index,
                                e.j,
                                lower.points,
                                lower.slope,
                                lower.slope_target,
                                lower.intercept,
                                lower.intercept_target
                            )?;
                            writeln!(
                                f,
                                "{},{},{},{},{},{},{}",
                                status.index,
                                e.j,
                                upper.points,
                                upper.slope,
                                upper.slope_target,
                                upper.intercept,
                                upper.intercept_target
                            )?;
                        }
                        GrowthCheck::Skipped(why) => {
                            writeln!(f, "{},{},0,skip: {why},,,", status.index, e.j)?;
                        }
                    }
                }
            }
        }
        "martingale" => {
            // re-simulate a small window per replicate with a feed recorder
            writeln!(f, "replicates,mean_z,mean_z_se,empirical_var,predicted_var,ratio")?;
            let mut values = Vec::new();
            let window = (0.0, scale.a_n / 4.0);
            for status in manifest.replicates.iter().filter(|r| r.ok) {
                let mut pop = Population::new(cfg.model.clone())?;
                let mut stream = rng::stream(cfg.model.seed, status.index as u64);
                let mut rec = MartingaleRecorder::new(1, window, cfg.model.s, cfg.model.mu);
                pop.run_until(window.1, &mut stream, &mut rec)?;
                values.push(martingale_path_value(&rec.feed, cfg.model.mu));
            }
            let check = martingale_check(&values)?;
            writeln!(
                f,
                "{},{},{},{},{},{}",
                check.replicates,
                check.mean_z,
                check.mean_z_se,
                check.empirical_variance,
                check.predicted_variance,
                check.variance_ratio
            )?;
        }
        "front" => {
            writeln!(f, "replicate,j,tau,q_j,xi_j,gamma_j,spacing_in_band,spacing_total")?;
            for status in manifest.replicates.iter().filter(|r| r.ok) {
                let (pop, _snaps) = resimulate(&cfg, status.index, scale.a_n)?;
                let front = front_constants(pop.tau(), &scale, cfg.model.s, &FrontConfig::default());
                let (inside, total) = tau_spacing_in_band(pop.tau(), &scale);
                for e in &front.per_type {
                    writeln!(
                        f,
                        "{},{},{},{},{},{},{inside},{total}",
                        status.index, e.j, e.tau, e.q_j, e.xi_j, e.gamma_j
                    )?;
                }
            }
        }
        other => return Err(Error::Config(format!("unknown diagnostic {other}"))),
    }
    Ok(())
}

/// Deterministically re-run one replicate's forward simulation (identical
/// stream) to recover in-memory records that are not persisted.
fn resimulate(
    cfg: &ExperimentConfig,
    index: usize,
    a_n: f64,
) -> coalsim::Result<(Population, SnapshotRecorder)> {
    let mut pop = Population::new(cfg.model.clone())?;
    let mut stream = rng::stream(cfg.model.seed, index as u64);
    let mut snaps = SnapshotRecorder::new(cfg.snapshot_dt());
    pop.run_until(a_n * cfg.model.t_units, &mut stream, &mut snaps)?;
    Ok((pop, snaps))
}
