//! Shared-memory execution with measured, bounded staleness.
//!
//! Workers claim a block, read a per-block-consistent snapshot, compute the
//! prox-gradient update and commit it under a global ticket; the commit order
//! defines `k`. The realized delays are derived from the read stamps, so the
//! run can be replayed exactly.

use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Mutex};
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::BlockVector;
use crate::error::{ApalmError, Result};
use crate::executor::{monitor_options, ReplayScript};
use crate::history::{cyclicity_window, default_depth, IterateHistory};
use crate::monitor::{CommitRecord, Monitor};
use crate::problem::Problem;
use crate::solver::{step_from_snapshot, SolverConfig, StepRule, Variant};
use crate::trace::{RunStatus, Trace};

/// What a worker does when its snapshot turns out older than `tau_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Throttle {
    /// Discard the update and retry from a fresh snapshot.
    Block,
    /// Abort the run with a staleness error.
    Error,
}

impl FromStr for Throttle {
    type Err = ApalmError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "block" => Ok(Throttle::Block),
            "error" => Ok(Throttle::Error),
            other => Err(ApalmError::Config(format!("unknown throttle {other:?} (expected block or error)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParallelConfig {
    pub workers: usize,
    /// Hard staleness cap; defaults to `4 * workers`.
    pub tau_max: Option<usize>,
    pub throttle: Throttle,
}

impl ParallelConfig {
    pub fn new(workers: usize) -> Self {
        ParallelConfig {
            workers,
            tau_max: None,
            throttle: Throttle::Block,
        }
    }

    pub fn tau_max(&self) -> usize {
        self.tau_max.unwrap_or(4 * self.workers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(ApalmError::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything a parallel run produces.
#[derive(Debug, Clone)]
pub struct ParallelOutcome {
    pub trace: Trace,
    /// The realized schedule, replayable with `config`.
    pub script: ReplayScript,
    /// Solver settings the run effectively used.
    pub config: SolverConfig,
}

/// The solver settings a parallel run uses before the schedule is known:
/// `tau = tau_max` and, for the deterministic variant, `rho_tau = tau_max`.
pub fn effective_config(cfg: &SolverConfig, pcfg: &ParallelConfig) -> Result<SolverConfig> {
    pcfg.validate()?;
    if cfg.linesearch.is_some() {
        return Err(ApalmError::Config("line search is only supported by the replay executor".into()));
    }
    let tau = pcfg.tau_max();
    let mut eff = cfg.clone();
    eff.tau = tau;
    eff.rho_override = match cfg.variant {
        Variant::Deterministic => Some(tau),
        Variant::Stochastic => None,
    };
    Ok(eff)
}

/// Sets `stop` if the owning thread unwinds.
struct StopOnPanic<'a>(&'a AtomicBool);

impl Drop for StopOnPanic<'_> {
    fn drop(&mut self) {
        if thread::panicking() {
            self.0.store(true, Ordering::SeqCst);
        }
    }
}

struct Shared<'a> {
    problem: &'a Problem,
    history: IterateHistory,
    rule: StepRule,
    variant: Variant,
    n: u64,
    tau_max: usize,
    throttle: Throttle,
    claimed: Vec<AtomicBool>,
    ticket: AtomicU64,
    stop: AtomicBool,
    commit_lock: Mutex<()>,
    error: Mutex<Option<ApalmError>>,
}

impl Shared<'_> {
    fn fail(&self, e: ApalmError) {
        let mut slot = self.error.lock().unwrap_or_else(|p| p.into_inner());
        if slot.is_none() {
            *slot = Some(e);
        }
        self.stop.store(true, Ordering::SeqCst);
    }

    fn done(&self) -> bool {
        self.stop.load(Ordering::Acquire) || self.history.current_k() >= self.n
    }

    fn claim(&self, rng: &mut ChaCha8Rng) -> Option<usize> {
        let m = self.claimed.len();
        match self.variant {
            Variant::Deterministic => {
                let j = (self.ticket.fetch_add(1, Ordering::SeqCst) % m as u64) as usize;
                while self.claimed[j]
                    .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
                    .is_err()
                {
                    if self.done() {
                        return None;
                    }
                    thread::yield_now();
                }
                Some(j)
            }
            Variant::Stochastic => loop {
                let j = rng.random_range(0..m);
                if self.claimed[j]
                    .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
                    .is_ok()
                {
                    return Some(j);
                }
                if self.done() {
                    return None;
                }
                thread::yield_now();
            },
        }
    }

    /// Computes and commits one update of the claimed block `j`.
    fn update(&self, j: usize, tx: &mpsc::Sender<CommitRecord>) -> Result<()> {
        let m = self.claimed.len();
        let bound = self.problem.regularizer(j).prox_bound();
        loop {
            let mut stamps = Vec::with_capacity(m);
            let mut blocks = Vec::with_capacity(m);
            for i in 0..m {
                let (s, v) = self.history.read_latest(i);
                stamps.push(s);
                blocks.push(v);
            }
            let snapshot = BlockVector::from_blocks(blocks);
            let l = self.problem.coordinate_lipschitz(&snapshot, j)?;
            let gamma = self.rule.gamma(l, bound);
            let out = step_from_snapshot(self.problem, &snapshot, snapshot.block(j), j, gamma)?;

            let _guard = self.commit_lock.lock().unwrap_or_else(|p| p.into_inner());
            let k = self.history.current_k();
            if k >= self.n || self.stop.load(Ordering::Acquire) {
                return Ok(());
            }
            let mut d = Vec::with_capacity(m);
            let mut worst = 0usize;
            for (i, &s) in stamps.iter().enumerate() {
                let di = self.history.realized_delay(i, s, k).unwrap_or(self.history.depth());
                worst = worst.max(di);
                d.push(di);
            }
            if worst > self.tau_max {
                match self.throttle {
                    Throttle::Block => continue,
                    Throttle::Error => {
                        return Err(ApalmError::Staleness {
                            delay: worst,
                            bound: self.tau_max,
                        })
                    }
                }
            }
            self.history.commit(j, out.new_block.clone())?;
            // the monitor may already have stopped listening
            let _ = tx.send(CommitRecord {
                k,
                j,
                d,
                gamma: out.gamma,
                lipschitz_snapshot: l,
                anchor: out.anchor,
                new_block: out.new_block,
                gradient: out.gradient,
            });
            return Ok(());
        }
    }

    fn worker(&self, w: usize, seed: u64, tx: mpsc::Sender<CommitRecord>) {
        let _guard = StopOnPanic(&self.stop);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(w as u64));
        while !self.done() {
            let Some(j) = self.claim(&mut rng) else { break };
            let res = self.update(j, &tx);
            self.claimed[j].store(false, Ordering::Release);
            if let Err(e) = res {
                self.fail(e);
                break;
            }
        }
    }
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic payload".into())
}

/// Runs `cfg` with `pcfg.workers` threads; returns the trace, the realized
/// schedule and the effective configuration for replaying it.
pub fn parallel_run(
    problem: &Problem,
    x0: &BlockVector,
    cfg: &SolverConfig,
    pcfg: &ParallelConfig,
) -> Result<(Trace, ReplayScript)> {
    let out = parallel_run_full(problem, x0, cfg, pcfg)?;
    Ok((out.trace, out.script))
}

pub fn parallel_run_full(
    problem: &Problem,
    x0: &BlockVector,
    cfg: &SolverConfig,
    pcfg: &ParallelConfig,
) -> Result<ParallelOutcome> {
    let m = problem.num_blocks();
    problem.space().check(x0)?;
    let mut eff = effective_config(cfg, pcfg)?;
    eff.validate(m)?;
    let m_glob = problem.resolve_global_lipschitz(x0, eff.seed)?;
    let rule = StepRule {
        variant: eff.variant,
        m_glob,
        tau: eff.tau,
        m,
        rho: eff.rho_override.unwrap_or(0),
        c: eff.c,
    };
    let monitor = Monitor::new(problem, x0, rule, monitor_options(&eff, m))?;
    let shared = Shared {
        problem,
        history: IterateHistory::new(x0.clone(), default_depth(eff.tau, eff.window(m))),
        rule,
        variant: eff.variant,
        n: eff.max_iters,
        tau_max: eff.tau,
        throttle: pcfg.throttle,
        claimed: (0..m).map(|_| AtomicBool::new(false)).collect(),
        ticket: AtomicU64::new(0),
        stop: AtomicBool::new(false),
        commit_lock: Mutex::new(()),
        error: Mutex::new(None),
    };

    let (tx, rx) = mpsc::channel::<CommitRecord>();
    let (monitor, panics) = thread::scope(|s| {
        let shared = &shared;
        let observer = s.spawn(move || {
            let _guard = StopOnPanic(&shared.stop);
            let mut monitor = monitor;
            for rec in rx {
                if let Err(e) = monitor.observe(&rec) {
                    shared.fail(e);
                    break;
                }
                if monitor.converged() {
                    shared.stop.store(true, Ordering::SeqCst);
                    break;
                }
            }
            monitor
        });
        let workers: Vec<_> = (0..pcfg.workers)
            .map(|w| {
                let tx = tx.clone();
                s.spawn(move || shared.worker(w, eff.seed, tx))
            })
            .collect();
        drop(tx);
        let mut panics = Vec::new();
        for h in workers {
            if let Err(p) = h.join() {
                panics.push(panic_message(p.as_ref()));
            }
        }
        let monitor = observer.join().map_err(|p| panic_message(p.as_ref()));
        (monitor, panics)
    });

    if let Some(msg) = panics.into_iter().next() {
        return Err(ApalmError::WorkerPanic(msg));
    }
    let monitor = monitor.map_err(ApalmError::WorkerPanic)?;
    if let Some(e) = shared.error.into_inner().unwrap_or_else(|p| p.into_inner()) {
        return Err(e);
    }
    let trace = monitor.finish(RunStatus::MaxIters);
    let steps = trace.schedule.len() as u64;
    eff.max_iters = steps;
    if eff.variant == Variant::Deterministic {
        let k = cyclicity_window(&trace.schedule.indices, m).unwrap_or(steps as usize + 1);
        eff.k_window = Some(k.max(m));
    }
    Ok(ParallelOutcome {
        script: ReplayScript::new(trace.schedule.clone()),
        trace,
        config: eff,
    })
}
