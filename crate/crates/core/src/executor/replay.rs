//! Single-threaded execution of a fixed schedule.

use crate::block::BlockVector;
use crate::error::Result;
use crate::executor::{monitor_options, ReplayScript};
use crate::history::{default_depth, rho_tau, IterateHistory};
use crate::monitor::{CommitRecord, Monitor};
use crate::problem::Problem;
use crate::solver::{linesearch_step, step_from_snapshot, SolverConfig, StepRule, Variant, XiBuffer};
use crate::trace::{RunStatus, Trace};

/// Runs `cfg.max_iters` steps using exactly the `(j_k, d_k)` of `script`.
pub fn replay(problem: &Problem, x0: &BlockVector, cfg: &SolverConfig, script: &ReplayScript) -> Result<Trace> {
    replay_inner(problem, x0, cfg, script, None)
}

/// [`replay`], calling `observe(k + 1, x^{k+1})` after every commit.
pub fn replay_observed(
    problem: &Problem,
    x0: &BlockVector,
    cfg: &SolverConfig,
    script: &ReplayScript,
    observe: &mut dyn FnMut(u64, &BlockVector),
) -> Result<Trace> {
    replay_inner(problem, x0, cfg, script, Some(observe))
}

fn replay_inner(
    problem: &Problem,
    x0: &BlockVector,
    cfg: &SolverConfig,
    script: &ReplayScript,
    mut observe: Option<&mut dyn FnMut(u64, &BlockVector)>,
) -> Result<Trace> {
    let m = problem.num_blocks();
    problem.space().check(x0)?;
    cfg.validate(m)?;
    let n = cfg.max_iters;
    script.validate(cfg, m, n)?;
    let m_glob = problem.resolve_global_lipschitz(x0, cfg.seed)?;
    let rho = match (cfg.variant, cfg.rho_override) {
        (Variant::Stochastic, _) => 0,
        (_, Some(r)) => r,
        (_, None) => rho_tau(&script.indices(n), cfg.tau),
    };
    let rule = StepRule {
        variant: cfg.variant,
        m_glob,
        tau: cfg.tau,
        m,
        rho,
        c: cfg.c,
    };
    let mut monitor = Monitor::new(problem, x0, rule, monitor_options(cfg, m))?;
    let history = IterateHistory::new(x0.clone(), default_depth(cfg.tau, cfg.window(m)));
    let mut xi = XiBuffer::new(monitor.params().coef(), cfg.tau);

    for k in 0..n {
        let (j, d) = script.at(k);
        let snapshot = history.compose_delayed(k, &d)?;
        let l = problem.coordinate_lipschitz(&snapshot, j)?;
        let gamma = rule.gamma(l, problem.regularizer(j).prox_bound());
        let out = match &cfg.linesearch {
            Some(ls) => linesearch_step(problem, &history, k, j, &d, gamma, ls, &xi, rule.delay_penalty())?.0,
            None => step_from_snapshot(problem, &snapshot, &history.current_block(j), j, gamma)?,
        };
        history.commit(j, out.new_block.clone())?;
        xi.push(out.step_norm * out.step_norm);
        if let Some(f) = observe.as_mut() {
            f(k + 1, &history.current());
        }
        monitor.observe(&CommitRecord {
            k,
            j,
            d: d.d,
            gamma: out.gamma,
            lipschitz_snapshot: l,
            anchor: out.anchor,
            new_block: out.new_block,
            gradient: out.gradient,
        })?;
        if monitor.converged() {
            break;
        }
    }
    Ok(monitor.finish(RunStatus::MaxIters))
}
