//! Runs a configured experiment, writes its artifacts, verifies traces and benchmarks worker counts.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::config::{Backend, ExperimentConfig};
use crate::error::{ApalmError, Result};
use crate::executor::parallel::parallel_run_full;
use crate::executor::replay::replay;
use crate::executor::ReplayScript;
use crate::history::{DelayPattern, Schedule};
use crate::monitor::{
    decrease_tolerance, offline_checks, supermartingale_verdict, LyapunovParams, OfflineReport,
    SupermartingaleVerdict,
};
use crate::problem::GlobalLipschitz;
use crate::solver::{SolverConfig, Variant};
use crate::trace::{parse_summary, read_csv, RunStatus, Trace, TraceRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATIONS: i32 = 1;
pub const EXIT_MAX_ITERS: i32 = 2;
pub const EXIT_FLAGS: i32 = 3;
pub const EXIT_CONFIG: i32 = 10;
pub const EXIT_IO: i32 = 11;

/// Replays used by `verify` for a stochastic configuration.
pub const DEFAULT_REPLAYS: usize = 200;
/// Steps per stratum in the stochastic verdict.
pub const STRATUM_LEN: usize = 100;

/// Process exit status for a hard error.
pub fn error_exit_code(e: &ApalmError) -> i32 {
    match e {
        ApalmError::Config(_)
        | ApalmError::Parse { .. }
        | ApalmError::Regularizer(_)
        | ApalmError::Schema(_)
        | ApalmError::Schedule(_) => EXIT_CONFIG,
        ApalmError::Io { .. } => EXIT_IO,
        ApalmError::Dimension(_) | ApalmError::BlockIndex { .. } => 12,
        ApalmError::NonFiniteGradient { .. } => 13,
        ApalmError::Unbounded { .. } => 14,
        ApalmError::StepsizeDomain { .. } => 15,
        ApalmError::StalenessOverflow { .. } | ApalmError::Staleness { .. } => 16,
        ApalmError::Stagnation { .. } => 17,
        ApalmError::MonitoringWindow(_) => 18,
        ApalmError::WorkerPanic(_) => 19,
    }
}

/// 3 if any assumption check fired, else 0 (converged) or 2 (iteration cap).
pub fn trace_exit_code(trace: &Trace) -> i32 {
    if trace.has_flags() {
        EXIT_FLAGS
    } else {
        match trace.status {
            RunStatus::Converged => EXIT_OK,
            RunStatus::MaxIters => EXIT_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: Trace,
    /// Settings the solver effectively ran with.
    pub effective: SolverConfig,
    /// Realized schedule of a parallel run.
    pub realized: Option<ReplayScript>,
    pub exit_code: i32,
}

/// Runs the experiment without touching the filesystem outputs.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let (problem, x0) = cfg.build_problem()?;
    let m = problem.num_blocks();
    let (trace, effective, realized) = match &cfg.backend {
        Backend::Replay { .. } => {
            let script = cfg.replay_script(m)?.expect("replay backend has a script");
            (replay(&problem, &x0, &cfg.solver, &script)?, cfg.solver.clone(), None)
        }
        Backend::Parallel(p) => {
            let out = parallel_run_full(&problem, &x0, &cfg.solver, p)?;
            (out.trace, out.config, Some(out.script))
        }
    };
    let exit_code = trace_exit_code(&trace);
    Ok(RunOutcome {
        trace,
        effective,
        realized,
        exit_code,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| ApalmError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| ApalmError::io(path, e))
}

pub fn write_artifacts(cfg: &ExperimentConfig, out: &RunOutcome) -> Result<()> {
    write_file(&cfg.output.trace, &out.trace.to_csv())?;
    let mut summary = out.trace.summary();
    writeln!(summary, "K = {}", out.effective.window(out.trace.meta.m)).unwrap();
    match &cfg.backend {
        Backend::Replay { .. } => summary.push_str("executor = replay\n"),
        Backend::Parallel(p) => {
            writeln!(summary, "executor = parallel\nworkers = {}\ntau_max = {}", p.workers, p.tau_max()).unwrap();
        }
    }
    writeln!(summary, "exit_code = {}", out.exit_code).unwrap();
    write_file(&cfg.output.summary, &summary)?;
    if let Some(script) = &out.realized {
        write_file(&cfg.schedule_path(), &script.schedule.to_text())?;
    }
    Ok(())
}

/// Loads, runs and writes artifacts; honors the worker-count environment override.
pub fn run_experiment(path: &Path) -> Result<RunOutcome> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply_env()?;
    let out = execute(&cfg)?;
    write_artifacts(&cfg, &out)?;
    Ok(out)
}

/// Result of re-checking a trace offline.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub rows: usize,
    pub offline: OfflineReport,
    pub verdict: Option<SupermartingaleVerdict>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.offline.is_clean() && self.verdict.as_ref().is_none_or(|v| v.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            EXIT_OK
        } else {
            EXIT_VIOLATIONS
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let list = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        writeln!(out, "rows checked: {}", self.rows).unwrap();
        for (name, rows) in [
            ("lyapunov increase", &self.offline.phi_increase),
            ("level set exit", &self.offline.level_set),
            ("phi below psi", &self.offline.phi_below_psi),
            ("certificate triangle", &self.offline.triangle),
        ] {
            if rows.is_empty() {
                writeln!(out, "{name}: ok").unwrap();
            } else {
                writeln!(out, "{name}: {} violation(s) at k = {}", rows.len(), list(rows)).unwrap();
            }
        }
        if let Some(v) = &self.verdict {
            let failing: Vec<String> = v
                .strata
                .iter()
                .filter(|s| !s.pass)
                .map(|s| format!("[{}, {})", s.start, s.end))
                .collect();
            writeln!(
                out,
                "supermartingale: {} over {} replays, {} strata, worst mean - 3 se = {:e}{}",
                if v.pass { "pass" } else { "FAIL" },
                v.replays,
                v.strata.len(),
                v.worst_margin(),
                if failing.is_empty() { String::new() } else { format!(", failing strata {}", failing.join(" ")) }
            )
            .unwrap();
        }
        writeln!(out, "verdict: {}", if self.passed() { "pass" } else { "FAIL" }).unwrap();
        out
    }
}

/// Monitor parameters recorded in a run summary.
pub fn params_from_summary(text: &str) -> Result<LyapunovParams> {
    let kv = parse_summary(text);
    let get = |key: &str| -> Result<&str> {
        kv.iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| ApalmError::Schema(format!("summary lacks the key {key:?}")))
    };
    let num = |key: &str| -> Result<f64> {
        get(key)?
            .parse::<f64>()
            .map_err(|_| ApalmError::Schema(format!("summary key {key:?} is not a number")))
    };
    Ok(LyapunovParams {
        variant: get("variant")?.parse::<Variant>()?,
        m_glob: num("M")?,
        tau: num("tau")? as usize,
        m: num("m")? as usize,
        rho: num("rho")? as usize,
    })
}

/// `R` independent stochastic replays of `cfg` with seeds `seed, seed+1, ...`,
/// all run to `max_iters` with the expected-decrease term logged.
pub fn stochastic_replays(cfg: &ExperimentConfig, replays: usize, m_glob: Option<f64>) -> Result<Vec<Vec<TraceRecord>>> {
    let (problem, x0) = cfg.build_problem()?;
    let m = problem.num_blocks();
    let m_glob = match m_glob {
        Some(v) => v,
        None => problem.resolve_global_lipschitz(&x0, cfg.solver.seed)?,
    };
    let problem = problem.with_global_lipschitz(GlobalLipschitz::Fixed(m_glob))?;
    let (delays, tau) = match &cfg.backend {
        Backend::Replay { script: Some(_), .. } => {
            return Err(ApalmError::Config(
                "stochastic verification generates fresh schedules; use delays instead of a script".into(),
            ))
        }
        Backend::Replay { delays, .. } => (*delays, cfg.solver.tau),
        Backend::Parallel(p) => (DelayPattern::Random { seed: 0 }, p.tau_max()),
    };
    (0..replays as u64)
        .map(|r| {
            let mut s = cfg.solver.clone();
            s.variant = Variant::Stochastic;
            s.seed = cfg.solver.seed.wrapping_add(r);
            s.tau = tau;
            s.tol_residual = f64::MIN_POSITIVE;
            s.track_expected_decrease = true;
            let pattern = match delays {
                DelayPattern::Random { .. } => DelayPattern::Random { seed: s.seed },
                p => p,
            };
            let indices = Schedule::uniform_indices(m, s.max_iters as usize, s.seed);
            let script = ReplayScript::new(Schedule::with_delays(indices, m, s.tau, pattern));
            Ok(replay(&problem, &x0, &s, &script)?.records)
        })
        .collect()
}

/// Re-runs the monitor checks on a trace written by [`run_experiment`].
/// For a stochastic config, `replays` fresh replays feed the statistical verdict.
pub fn verify(trace_path: &Path, config_path: &Path, replays: usize) -> Result<VerifyReport> {
    let cfg = ExperimentConfig::load(config_path)?;
    let records = read_csv(trace_path)?;
    let summary = std::fs::read_to_string(&cfg.output.summary).map_err(|e| ApalmError::io(&cfg.output.summary, e))?;
    let params = params_from_summary(&summary)?;
    if records.is_empty() {
        return Err(ApalmError::Schema(format!("{}: trace has no rows", trace_path.display())));
    }
    for (i, r) in records.iter().enumerate() {
        if r.k != i as u64 {
            return Err(ApalmError::Schema(format!(
                "{}: row {} has k = {}, expected {i}",
                trace_path.display(),
                i + 2,
                r.k
            )));
        }
    }
    let deterministic = params.variant == Variant::Deterministic;
    let offline = offline_checks(&records, &params, deterministic);
    let verdict = if deterministic {
        None
    } else {
        let runs = stochastic_replays(&cfg, replays, Some(params.m_glob))?;
        let tol = decrease_tolerance(records[0].phi);
        Some(supermartingale_verdict(&runs, STRATUM_LEN, tol)?)
    };
    Ok(VerifyReport {
        rows: records.len(),
        offline,
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub workers: usize,
    pub updates: u64,
    pub seconds: f64,
}

impl BenchRow {
    pub fn per_update(&self) -> f64 {
        self.seconds / self.updates.max(1) as f64
    }
}

/// Wall-clock of the parallel backend for each worker count, run to `max_iters`.
pub fn bench(config_path: &Path, workers: &[usize]) -> Result<Vec<BenchRow>> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    let (problem, x0) = cfg.build_problem()?;
    let m_glob = problem.resolve_global_lipschitz(&x0, cfg.solver.seed)?;
    let problem = problem.with_global_lipschitz(GlobalLipschitz::Fixed(m_glob))?;
    cfg.solver.tol_residual = f64::MIN_POSITIVE;
    let base = match cfg.backend {
        Backend::Parallel(p) => p,
        Backend::Replay { .. } => crate::executor::ParallelConfig::new(1),
    };
    workers
        .iter()
        .map(|&w| {
            let mut p = base;
            p.workers = w;
            let start = Instant::now();
            let out = parallel_run_full(&problem, &x0, &cfg.solver, &p)?;
            Ok(BenchRow {
                workers: w,
                updates: out.trace.iterations(),
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

pub fn render_bench(rows: &[BenchRow]) -> String {
    let mut out = String::from("workers,updates,seconds,us_per_update,speedup\n");
    let base = rows.first().map(BenchRow::per_update).unwrap_or(f64::NAN);
    for r in rows {
        writeln!(
            out,
            "{},{},{:.4},{:.3},{:.2}",
            r.workers,
            r.updates,
            r.seconds,
            r.per_update() * 1e6,
            base / r.per_update()
        )
        .unwrap();
    }
    out
}
