//! Execution backends: deterministic replay and the parallel shared-memory engine.

pub mod parallel;
pub mod replay;

use crate::error::{ApalmError, Result};
use crate::history::{DelayPattern, DelayRecord, Schedule};
use crate::monitor::MonitorOptions;
use crate::solver::{IndexStream, SolverConfig, Variant};

pub use parallel::{ParallelConfig, Throttle};

pub enum Executor {
    Replay(ReplayScript),
    Parallel(ParallelConfig),
}

/// A fixed `(j_k, d_k)` sequence, optionally repeated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayScript {
    pub schedule: Schedule,
    /// Repeat the schedule when it is shorter than the run.
    pub cyclic: bool,
}

impl ReplayScript {
    pub fn new(schedule: Schedule) -> Self {
        ReplayScript {
            schedule,
            cyclic: false,
        }
    }

    /// A script of `n` steps following the configured index rule.
    pub fn generate(cfg: &SolverConfig, m: usize, n: u64, pattern: DelayPattern) -> Self {
        let indices: Vec<usize> = IndexStream::from_config(cfg, m).take(n as usize).collect();
        ReplayScript::new(Schedule::with_delays(indices, m, cfg.tau, pattern))
    }

    pub fn len(&self) -> usize {
        self.schedule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schedule.is_empty()
    }

    /// `(j_k, d_k)` for step `k`.
    pub fn at(&self, k: u64) -> (usize, DelayRecord) {
        let n = self.schedule.len() as u64;
        let i = if self.cyclic { k % n } else { k } as usize;
        let d = DelayRecord {
            k,
            d: self.schedule.delays[i].d.clone(),
        };
        (self.schedule.indices[i], d)
    }

    /// The block indices of the first `n` steps.
    pub fn indices(&self, n: u64) -> Vec<usize> {
        (0..n).map(|k| self.at(k).0).collect()
    }

    pub fn validate(&self, cfg: &SolverConfig, m: usize, n: u64) -> Result<()> {
        if n > 0 && self.is_empty() {
            return Err(ApalmError::Schedule("replay script is empty".into()));
        }
        if !self.cyclic && (self.len() as u64) < n {
            return Err(ApalmError::Schedule(format!(
                "replay script has {} steps but max_iters is {n}",
                self.len()
            )));
        }
        if let Some(w) = self.schedule.num_blocks() {
            if w != m {
                return Err(ApalmError::Schedule(format!("script delay vectors have {w} entries for {m} blocks")));
            }
        }
        if let Some(&j) = self.schedule.indices.iter().find(|&&j| j >= m) {
            return Err(ApalmError::Schedule(format!("block index {} out of range 1..={m}", j + 1)));
        }
        self.schedule.check_delays(cfg.tau)?;
        if cfg.variant == Variant::Deterministic {
            let span = if self.cyclic { n.min(self.len() as u64 * 2 + cfg.window(m) as u64) } else { n };
            let sched = Schedule::with_delays(self.indices(span), m, 0, DelayPattern::Zero);
            sched.check_essentially_cyclic(m, cfg.window(m))?;
        }
        Ok(())
    }
}

pub(crate) fn monitor_options(cfg: &SolverConfig, m: usize) -> MonitorOptions {
    MonitorOptions {
        tol_residual: cfg.tol_residual,
        residual_stride: cfg.residual_stride,
        expected_decrease: cfg.track_expected_decrease,
        linesearch_c: cfg.linesearch.map(|ls| ls.c_accept),
        k_window: cfg.window(m),
    }
}
