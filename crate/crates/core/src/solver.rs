//! The stochastic and deterministic asynchronous PALM iterations.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::{dist_sq, BlockVector};
use crate::error::{ApalmError, Result};
use crate::executor::{parallel, replay, Executor};
use crate::history::{DelayRecord, IterateHistory};
use crate::problem::Problem;
use crate::prox::PROX_BOUND_STRICTNESS;
use crate::trace::Trace;

/// Maximum number of shrink steps before a line search gives up.
pub const MAX_SHRINKS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Stochastic,
    Deterministic,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Stochastic => "stochastic",
            Variant::Deterministic => "deterministic",
        })
    }
}

impl FromStr for Variant {
    type Err = ApalmError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "stochastic" => Ok(Variant::Stochastic),
            "deterministic" => Ok(Variant::Deterministic),
            other => Err(ApalmError::Config(format!(
                "unknown variant {other:?} (expected stochastic or deterministic)"
            ))),
        }
    }
}

/// Block order for the deterministic variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexOrder {
    /// `j_k = k mod m`; essentially cyclic with `K = m`.
    Cyclic,
    /// A fresh permutation every epoch; essentially cyclic with `K = 2m - 1`.
    Shuffled,
}

impl IndexOrder {
    /// Smallest window length for which this order is essentially cyclic.
    pub fn window(&self, m: usize) -> usize {
        match self {
            IndexOrder::Cyclic => m,
            IndexOrder::Shuffled => (2 * m).saturating_sub(1).max(1),
        }
    }
}

impl FromStr for IndexOrder {
    type Err = ApalmError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cyclic" => Ok(IndexOrder::Cyclic),
            "shuffled" => Ok(IndexOrder::Shuffled),
            other => Err(ApalmError::Config(format!(
                "unknown order {other:?} (expected cyclic or shuffled)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    /// The constant `C` of the acceptance test.
    pub c_accept: f64,
    pub shrink: f64,
    pub grow: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch {
            c_accept: 1e-6,
            shrink: 0.5,
            grow: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub variant: Variant,
    pub c: f64,
    pub tau: usize,
    /// Essential-cyclicity window; `None` means the order's natural window.
    pub k_window: Option<usize>,
    pub max_iters: u64,
    pub tol_residual: f64,
    pub seed: u64,
    pub linesearch: Option<LineSearch>,
    pub order: IndexOrder,
    /// Stochastic residual is evaluated on every `residual_stride`-th row.
    pub residual_stride: usize,
    /// Use this `rho_tau` instead of the one computed from the schedule.
    pub rho_override: Option<usize>,
    /// Evaluate the expected-decrease term of the stochastic Lyapunov inequality on every row.
    pub track_expected_decrease: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            variant: Variant::Deterministic,
            c: 0.9,
            tau: 0,
            k_window: None,
            max_iters: 1000,
            tol_residual: 1e-6,
            seed: 0,
            linesearch: None,
            order: IndexOrder::Cyclic,
            residual_stride: 25,
            rho_override: None,
            track_expected_decrease: false,
        }
    }
}

impl SolverConfig {
    pub fn window(&self, m: usize) -> usize {
        self.k_window.unwrap_or_else(|| self.order.window(m))
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(ApalmError::Config(format!("c = {} must lie strictly inside (0, 1)", self.c)));
        }
        if !(self.tol_residual > 0.0) {
            return Err(ApalmError::Config("tol_residual must be positive".into()));
        }
        if self.residual_stride == 0 {
            return Err(ApalmError::Config("residual_stride must be at least 1".into()));
        }
        if self.variant == Variant::Deterministic && self.window(m) < m {
            return Err(ApalmError::Config(format!(
                "K = {} is smaller than the number of blocks {m}",
                self.window(m)
            )));
        }
        if let Some(ls) = &self.linesearch {
            if self.variant != Variant::Deterministic {
                return Err(ApalmError::Config("line search is only defined for the deterministic variant".into()));
            }
            if !(ls.c_accept > 0.0) || !(ls.shrink > 0.0 && ls.shrink < 1.0) || !(ls.grow >= 1.0) {
                return Err(ApalmError::Config(format!(
                    "line search needs C > 0, shrink in (0,1), grow >= 1; got {ls:?}"
                )));
            }
        }
        if let Some(rho) = self.rho_override {
            if rho > self.tau {
                return Err(ApalmError::Config(format!("rho_tau = {rho} exceeds tau = {}", self.tau)));
            }
        }
        Ok(())
    }
}

fn cap(gamma: f64, lambda_r: f64) -> f64 {
    if lambda_r.is_finite() {
        gamma.min(lambda_r * PROX_BOUND_STRICTNESS)
    } else {
        gamma
    }
}

/// `min{c / (L + 2 M tau / sqrt(m)), lambda_r}`.
pub fn stepsize_stochastic(l: f64, m_glob: f64, tau: usize, m: usize, c: f64, lambda_r: f64) -> f64 {
    let l = l.max(crate::problem::LIPSCHITZ_FLOOR);
    let denom = l + 2.0 * m_glob * tau as f64 / (m as f64).sqrt();
    cap(c / denom, lambda_r)
}

/// `min{c / (L + 2 M sqrt(rho tau)), lambda_r}`.
pub fn stepsize_deterministic(l: f64, m_glob: f64, rho: usize, tau: usize, c: f64, lambda_r: f64) -> f64 {
    let l = l.max(crate::problem::LIPSCHITZ_FLOOR);
    let denom = l + 2.0 * m_glob * ((rho * tau) as f64).sqrt();
    cap(c / denom, lambda_r)
}

/// The stepsize formula of one run with its constants fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRule {
    pub variant: Variant,
    pub m_glob: f64,
    pub tau: usize,
    pub m: usize,
    pub rho: usize,
    pub c: f64,
}

impl StepRule {
    pub fn gamma(&self, l: f64, lambda_r: f64) -> f64 {
        match self.variant {
            Variant::Stochastic => stepsize_stochastic(l, self.m_glob, self.tau, self.m, self.c, lambda_r),
            Variant::Deterministic => {
                stepsize_deterministic(l, self.m_glob, self.rho, self.tau, self.c, lambda_r)
            }
        }
    }

    /// `2 M tau / sqrt(m)` or `2 M sqrt(rho tau)`.
    pub fn delay_penalty(&self) -> f64 {
        match self.variant {
            Variant::Stochastic => 2.0 * self.m_glob * self.tau as f64 / (self.m as f64).sqrt(),
            Variant::Deterministic => 2.0 * self.m_glob * ((self.rho * self.tau) as f64).sqrt(),
        }
    }
}

/// `j_k` for cyclic and stochastic selection (0-based).
pub fn next_index(variant: Variant, m: usize, k: u64, rng: &mut ChaCha8Rng) -> usize {
    match variant {
        Variant::Deterministic => (k % m as u64) as usize,
        Variant::Stochastic => rng.random_range(0..m),
    }
}

/// Stream of block indices matching the configured selection rule.
#[derive(Debug, Clone)]
pub struct IndexStream {
    variant: Variant,
    order: IndexOrder,
    m: usize,
    k: u64,
    rng: ChaCha8Rng,
    perm: Vec<usize>,
}

impl IndexStream {
    pub fn new(variant: Variant, order: IndexOrder, m: usize, seed: u64) -> Self {
        IndexStream {
            variant,
            order,
            m,
            k: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            perm: (0..m).collect(),
        }
    }

    pub fn from_config(cfg: &SolverConfig, m: usize) -> Self {
        Self::new(cfg.variant, cfg.order, m, cfg.seed)
    }
}

impl Iterator for IndexStream {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let k = self.k;
        self.k += 1;
        let j = match (self.variant, self.order) {
            (Variant::Deterministic, IndexOrder::Shuffled) => {
                let pos = (k % self.m as u64) as usize;
                if pos == 0 {
                    self.perm.shuffle(&mut self.rng);
                }
                self.perm[pos]
            }
            _ => next_index(self.variant, self.m, k, &mut self.rng),
        };
        Some(j)
    }
}

/// Result of one block prox-gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub j: usize,
    pub gamma: f64,
    pub new_block: Vec<f64>,
    pub step_norm: f64,
    /// The current block value the prox was anchored at.
    pub anchor: Vec<f64>,
    /// `grad_j f` at the delayed snapshot.
    pub gradient: Vec<f64>,
}

/// `prox(x_j - gamma * grad_j f(snapshot))` anchored at `anchor`.
pub fn step_from_snapshot(
    problem: &Problem,
    snapshot: &BlockVector,
    anchor: &[f64],
    j: usize,
    gamma: f64,
) -> Result<StepOutcome> {
    let gradient = problem.partial_gradient(snapshot, j)?;
    step_with_gradient(problem, anchor.to_vec(), gradient, j, gamma)
}

fn step_with_gradient(
    problem: &Problem,
    anchor: Vec<f64>,
    gradient: Vec<f64>,
    j: usize,
    gamma: f64,
) -> Result<StepOutcome> {
    let v: Vec<f64> = anchor.iter().zip(&gradient).map(|(a, g)| a - gamma * g).collect();
    let mut new_block = vec![0.0; v.len()];
    problem.regularizer(j).prox_into(&v, gamma, &mut new_block)?;
    let step_norm = dist_sq(&new_block, &anchor).sqrt();
    Ok(StepOutcome {
        j,
        gamma,
        new_block,
        step_norm,
        anchor,
        gradient,
    })
}

/// One step at iteration `k` reading the delayed vector `x^{k-d}` from `h`.
pub fn step(
    problem: &Problem,
    h: &IterateHistory,
    k: u64,
    j: usize,
    d: &DelayRecord,
    gamma: f64,
) -> Result<StepOutcome> {
    problem.space().check_block(j)?;
    let snapshot = h.compose_delayed(k, d)?;
    let anchor = h.current_block(j);
    step_from_snapshot(problem, &snapshot, &anchor, j, gamma)
}

/// Rolling `xi_k = coef * (sum of the last tau squared step norms)`.
#[derive(Debug, Clone)]
pub struct XiBuffer {
    coef: f64,
    tau: usize,
    buf: VecDeque<f64>,
    xi: f64,
}

impl XiBuffer {
    pub fn new(coef: f64, tau: usize) -> Self {
        XiBuffer {
            coef,
            tau,
            buf: VecDeque::with_capacity(tau + 1),
            xi: 0.0,
        }
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn push(&mut self, step_sq: f64) {
        if self.tau == 0 {
            return;
        }
        self.xi += self.coef * step_sq;
        self.buf.push_back(step_sq);
        if self.buf.len() > self.tau {
            let oldest = self.buf.pop_front().expect("nonempty");
            self.xi -= self.coef * oldest;
        }
        self.xi = self.xi.max(0.0);
    }
}

/// Backtracking step for the deterministic variant.
///
/// Starts at `gamma0 * grow` and shrinks until
/// `Psi(x^{k+1}) + (C + penalty/4) |dx|^2 <= Psi(x^k) + xi_k`,
/// where `penalty = 2 M sqrt(rho tau)`. Returns the outcome and the number of shrinks.
#[allow(clippy::too_many_arguments)]
pub fn linesearch_step(
    problem: &Problem,
    h: &IterateHistory,
    k: u64,
    j: usize,
    d: &DelayRecord,
    gamma0: f64,
    ls: &LineSearch,
    xi: &XiBuffer,
    penalty: f64,
) -> Result<(StepOutcome, usize)> {
    let snapshot = h.compose_delayed(k, d)?;
    let mut x = h.current();
    let psi_k = problem.psi_value(&x)?;
    let anchor = x.block(j).to_vec();
    let gradient = problem.partial_gradient(&snapshot, j)?;
    let lambda = problem.regularizer(j).prox_bound();
    let weight = ls.c_accept + penalty / 4.0;
    let slack = 1e-12 * psi_k.abs().max(1.0);
    let mut gamma = cap(gamma0 * ls.grow, lambda);
    for shrinks in 0..=MAX_SHRINKS {
        let out = step_with_gradient(problem, anchor.clone(), gradient.clone(), j, gamma)?;
        x.set_block(j, &out.new_block);
        let psi_next = problem.psi_value(&x)?;
        if psi_next + weight * out.step_norm * out.step_norm <= psi_k + xi.xi() + slack {
            return Ok((out, shrinks));
        }
        gamma *= ls.shrink;
    }
    Err(ApalmError::Stagnation {
        k,
        shrinks: MAX_SHRINKS,
    })
}

/// Runs the configured variant on `problem` from `x0` with the chosen backend.
pub fn run(problem: &Problem, x0: &BlockVector, cfg: &SolverConfig, exec: &Executor) -> Result<Trace> {
    match exec {
        Executor::Replay(script) => replay::replay(problem, x0, cfg, script),
        Executor::Parallel(pcfg) => parallel::parallel_run(problem, x0, cfg, pcfg).map(|(t, _)| t),
    }
}
