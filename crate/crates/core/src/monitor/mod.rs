//! Lyapunov monitoring: objective and Lyapunov values, decrease checks,
//! residual certificates and the assumption check on `M`.

pub mod rate;
pub mod residual;

use std::collections::VecDeque;

use crate::block::{dist_sq, BlockVector};
use crate::error::{ApalmError, Result};
use crate::history::{default_depth, DelayRecord, IterateHistory, Schedule};
use crate::problem::Problem;
use crate::solver::{StepRule, Variant};
use crate::trace::{RunStatus, Trace, TraceMeta, TraceRecord};

use residual::{block_dist, residuals, stochastic_residual, BlockMeta};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovParams {
    pub variant: Variant,
    pub m_glob: f64,
    pub tau: usize,
    pub m: usize,
    pub rho: usize,
}

impl LyapunovParams {
    /// `M / (2 sqrt(m))` or `M sqrt(rho) / (2 sqrt(tau))`; zero when `tau = 0`.
    pub fn coef(&self) -> f64 {
        if self.tau == 0 {
            return 0.0;
        }
        match self.variant {
            Variant::Stochastic => self.m_glob / (2.0 * (self.m as f64).sqrt()),
            Variant::Deterministic => self.m_glob * (self.rho as f64).sqrt() / (2.0 * (self.tau as f64).sqrt()),
        }
    }

    /// `Psi + coef * sum_{i=1}^{tau} (tau - i + 1) s_{k-i}^2` with `recent[i-1] = s_{k-i}^2`.
    pub fn lyapunov_from(&self, psi: f64, recent: &[f64]) -> f64 {
        let coef = self.coef();
        if coef == 0.0 {
            return psi;
        }
        let tail: f64 = (1..=self.tau)
            .map(|i| (self.tau - i + 1) as f64 * recent.get(i - 1).copied().unwrap_or(0.0))
            .sum();
        psi + coef * tail
    }
}

impl From<&TraceMeta> for LyapunovParams {
    fn from(m: &TraceMeta) -> Self {
        LyapunovParams {
            variant: m.variant,
            m_glob: m.global_m,
            tau: m.tau,
            m: m.m,
            rho: m.rho,
        }
    }
}

/// `Phi(z^k)` from the iterates and step norms retained in `h`.
pub fn lyapunov(problem: &Problem, h: &IterateHistory, k: u64, p: &LyapunovParams) -> Result<f64> {
    let x = h.iterate(k as i64)?;
    let psi = problem.psi_value(&x)?;
    let recent = (1..=p.tau)
        .map(|i| h.step_sq(k as i64 - i as i64))
        .collect::<Result<Vec<_>>>()?;
    Ok(p.lyapunov_from(psi, &recent))
}

/// One committed step as seen by the monitor.
#[derive(Debug, Clone, PartialEq)]
pub struct CommitRecord {
    pub k: u64,
    /// 0-based block index.
    pub j: usize,
    pub d: Vec<usize>,
    pub gamma: f64,
    pub lipschitz_snapshot: f64,
    pub anchor: Vec<f64>,
    pub new_block: Vec<f64>,
    /// `grad_j f` at the delayed snapshot.
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorOptions {
    pub tol_residual: f64,
    pub residual_stride: usize,
    pub expected_decrease: bool,
    /// Line-search constant `C`; the decrease term then is `C |dx|^2`.
    pub linesearch_c: Option<f64>,
    pub k_window: usize,
}

/// Absolute tolerance of the decrease check.
pub fn decrease_tolerance(phi0: f64) -> f64 {
    1e-9 * phi0.abs().max(1.0)
}

/// Absolute tolerance of the level-set check.
pub fn level_set_tolerance(psi0: f64) -> f64 {
    1e-10 * psi0.abs().max(1.0)
}

/// Consumes committed steps in order and produces the trace.
pub struct Monitor<'a> {
    problem: &'a Problem,
    params: LyapunovParams,
    rule: StepRule,
    opts: MonitorOptions,
    history: IterateHistory,
    x: BlockVector,
    /// Squared step norms, most recent first, at most `tau` of them.
    recent: VecDeque<f64>,
    metas: Vec<Option<BlockMeta>>,
    records: Vec<TraceRecord>,
    schedule: Schedule,
    m_violations: Vec<u64>,
    fejer_violations: Vec<u64>,
    level_set_violations: Vec<u64>,
    c_value: f64,
    converged: bool,
}

impl<'a> Monitor<'a> {
    pub fn new(
        problem: &'a Problem,
        x0: &BlockVector,
        rule: StepRule,
        opts: MonitorOptions,
    ) -> Result<Self> {
        problem.space().check(x0)?;
        let psi0 = problem.psi_value(x0)?;
        if !psi0.is_finite() {
            return Err(ApalmError::Config(format!("Psi(x0) = {psi0} is not finite")));
        }
        let params = LyapunovParams {
            variant: rule.variant,
            m_glob: rule.m_glob,
            tau: rule.tau,
            m: rule.m,
            rho: rule.rho,
        };
        Ok(Monitor {
            problem,
            params,
            rule,
            opts,
            history: IterateHistory::new(x0.clone(), default_depth(rule.tau, opts.k_window)),
            x: x0.clone(),
            recent: VecDeque::with_capacity(rule.tau + 1),
            metas: vec![None; problem.num_blocks()],
            records: vec![TraceRecord::initial(psi0)],
            schedule: Schedule::default(),
            m_violations: Vec::new(),
            fejer_violations: Vec::new(),
            level_set_violations: Vec::new(),
            c_value: rule.c,
            converged: false,
        })
    }

    pub fn params(&self) -> &LyapunovParams {
        &self.params
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn current_k(&self) -> u64 {
        self.history.current_k()
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn observe(&mut self, rec: &CommitRecord) -> Result<TraceRecord> {
        let k = self.history.current_k();
        if rec.k != k {
            return Err(ApalmError::Schedule(format!("commit {} observed at iteration {k}", rec.k)));
        }
        let problem = self.problem;
        let j = rec.j;
        let delay = DelayRecord { k, d: rec.d.clone() };
        let delayed = delay.max_delay() > 0;
        let snapshot = if delayed {
            Some(self.history.compose_delayed(k, &delay)?)
        } else {
            None
        };
        let snap = snapshot.as_ref().unwrap_or(&self.x);

        let lipschitz_current = problem.coordinate_lipschitz(&self.x, j)?;
        let m_check_ratio = self.m_check(snap, rec)?;
        if m_check_ratio > 1.0 {
            self.m_violations.push(k + 1);
        }

        let penalty = self.rule.delay_penalty();
        let step_sq = dist_sq(&rec.new_block, &rec.anchor);
        let y_decrease = match (self.params.variant, self.opts.linesearch_c) {
            (Variant::Deterministic, Some(c)) => c * step_sq,
            (Variant::Deterministic, None) => 0.5 * (1.0 / rec.gamma - lipschitz_current - penalty) * step_sq,
            (Variant::Stochastic, _) if self.opts.expected_decrease => self.expected_decrease(snap, penalty)?,
            (Variant::Stochastic, _) => f64::NAN,
        };

        let delta: Vec<f64> = rec.new_block.iter().zip(&rec.anchor).map(|(a, b)| a - b).collect();
        self.x.set_block(j, &rec.new_block);
        self.history.commit(j, rec.new_block.clone())?;
        if self.params.tau > 0 {
            self.recent.push_front(step_sq);
            self.recent.truncate(self.params.tau);
        }
        self.metas[j] = Some(BlockMeta {
            anchor: rec.anchor.clone(),
            gamma: rec.gamma,
            gradient: rec.gradient.clone(),
        });
        self.schedule.indices.push(j);
        self.schedule.delays.push(delay);

        let psi = problem.psi_value(&self.x)?;
        let recent: Vec<f64> = self.recent.iter().copied().collect();
        let phi = self.params.lyapunov_from(psi, &recent);
        let (res_a, res_b, res_c) = if self.metas.iter().all(Option::is_some) {
            let cert = residuals(
                problem,
                &self.x,
                &self.metas,
                j,
                &delta,
                &recent,
                self.params.coef(),
                self.params.tau,
            )?;
            (cert.a_norm, cert.b_norm, cert.c_norm)
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        let res_w = if self.params.variant == Variant::Stochastic && (k + 1) % self.opts.residual_stride as u64 == 0 {
            stochastic_residual(problem, &self.x, &self.rule)?
        } else {
            f64::NAN
        };

        let row = TraceRecord {
            k: k + 1,
            j: j + 1,
            gamma: rec.gamma,
            d_max: rec.d.iter().copied().max().unwrap_or(0),
            step_norm: step_sq.sqrt(),
            psi,
            phi,
            res_a,
            res_b,
            res_c,
            res_w,
            lipschitz_current,
            lipschitz_snapshot: rec.lipschitz_snapshot,
            y_decrease,
            m_check_ratio,
        };
        let first = self.records[0];
        if self.params.variant == Variant::Deterministic {
            let prev = self.records.last().expect("initial row").phi;
            if phi + y_decrease > prev + decrease_tolerance(first.phi) {
                self.fejer_violations.push(k + 1);
            }
            if psi > first.psi + level_set_tolerance(first.psi) {
                self.level_set_violations.push(k + 1);
            }
        }
        self.converged = match self.params.variant {
            Variant::Deterministic => res_c <= self.opts.tol_residual,
            Variant::Stochastic => res_w <= self.opts.tol_residual,
        };
        self.records.push(row);
        Ok(row)
    }

    /// `|grad(x^k) - grad(x^{k-d})| / (M |x^k - x^{k-d}|)`, block-wise in the
    /// deterministic case and for the full gradient in the stochastic case.
    fn m_check(&self, snap: &BlockVector, rec: &CommitRecord) -> Result<f64> {
        let problem = self.problem;
        let (lhs, scale) = match self.params.variant {
            Variant::Deterministic => {
                let g = problem.partial_gradient(&self.x, rec.j)?;
                let scale = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                (block_dist(&g, &rec.gradient), scale)
            }
            Variant::Stochastic => {
                if std::ptr::eq(snap, &self.x) {
                    return Ok(0.0);
                }
                let gx = problem.full_gradient(&self.x)?;
                let gs = problem.full_gradient(snap)?;
                (gx.dist(&gs), gx.norm())
            }
        };
        let rhs = self.params.m_glob * self.x.dist(snap);
        let slack = 1e-12 * scale.max(1.0);
        if lhs <= slack {
            return Ok(0.0);
        }
        if rhs == 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(lhs / (rhs * (1.0 + 1e-9) + slack))
    }

    /// `(1/2m) sum_j (1/gamma_j - L_j(x^k) - penalty) |w_j - x_j|^2` at the current iterate.
    fn expected_decrease(&self, snap: &BlockVector, penalty: f64) -> Result<f64> {
        let problem = self.problem;
        let m = problem.num_blocks();
        let mut total = 0.0;
        let mut w = Vec::new();
        for i in 0..m {
            let g = problem.partial_gradient(snap, i)?;
            let l_snap = problem.coordinate_lipschitz(snap, i)?;
            let gamma = self.rule.gamma(l_snap, problem.regularizer(i).prox_bound());
            let xi = self.x.block(i);
            let v: Vec<f64> = xi.iter().zip(&g).map(|(a, b)| a - gamma * b).collect();
            w.resize(v.len(), 0.0);
            problem.regularizer(i).prox_into(&v, gamma, &mut w)?;
            let l_cur = problem.coordinate_lipschitz(&self.x, i)?;
            total += (1.0 / gamma - l_cur - penalty) * dist_sq(&w, xi);
        }
        Ok(total / (2.0 * m as f64))
    }

    pub fn finish(self, status: RunStatus) -> Trace {
        let first = self.records[0];
        let status = if self.converged { RunStatus::Converged } else { status };
        Trace {
            meta: TraceMeta {
                variant: self.params.variant,
                m: self.params.m,
                global_m: self.params.m_glob,
                tau: self.params.tau,
                rho: self.params.rho,
                c: self.c_value,
                psi0: first.psi,
                linesearch: self.opts.linesearch_c.is_some(),
            },
            records: self.records,
            schedule: self.schedule,
            status,
            m_violations: self.m_violations,
            fejer_violations: self.fejer_violations,
            level_set_violations: self.level_set_violations,
            final_point: self.x,
        }
    }
}

/// Rows `k+1` where `Phi_{k+1} + Y_k > Phi_k + tol`, using the logged decrease terms.
pub fn check_decrease(records: &[TraceRecord], tol_abs: f64) -> Vec<u64> {
    records
        .windows(2)
        .filter(|w| {
            let y = if w[1].y_decrease.is_nan() { 0.0 } else { w[1].y_decrease };
            w[1].phi + y > w[0].phi + tol_abs
        })
        .map(|w| w[1].k)
        .collect()
}

/// Violations found by the offline verifier, keyed by row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OfflineReport {
    pub phi_increase: Vec<u64>,
    pub level_set: Vec<u64>,
    pub phi_below_psi: Vec<u64>,
    pub triangle: Vec<u64>,
}

impl OfflineReport {
    pub fn is_clean(&self) -> bool {
        self.phi_increase.is_empty()
            && self.level_set.is_empty()
            && self.phi_below_psi.is_empty()
            && self.triangle.is_empty()
    }

    pub fn all_rows(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self
            .phi_increase
            .iter()
            .chain(&self.level_set)
            .chain(&self.phi_below_psi)
            .chain(&self.triangle)
            .copied()
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Checks that need only the CSV columns: monotone `Phi`, level set,
/// `Phi >= Psi`, and the certificate triangle inequality.
pub fn offline_checks(records: &[TraceRecord], params: &LyapunovParams, deterministic: bool) -> OfflineReport {
    let mut rep = OfflineReport::default();
    let Some(first) = records.first() else {
        return rep;
    };
    let tol = decrease_tolerance(first.phi);
    let shift = 2.0 * params.coef() * params.tau as f64;
    for (i, r) in records.iter().enumerate() {
        let scale = r.psi.abs().max(1.0);
        if r.phi < r.psi - 1e-12 * scale {
            rep.phi_below_psi.push(r.k);
        }
        if !r.res_c.is_nan() && r.res_c > r.res_a + shift * r.step_norm + 1e-9 * (r.res_a + r.res_c).max(1.0) {
            rep.triangle.push(r.k);
        }
        if deterministic {
            if i > 0 && r.phi > records[i - 1].phi + tol {
                rep.phi_increase.push(r.k);
            }
            if r.psi > first.psi + level_set_tolerance(first.psi) {
                rep.level_set.push(r.k);
            }
        }
    }
    rep
}

/// Per-stratum statistics of `D_k = Phi_{k+1} - Phi_k + Y_k` across independent replays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumStat {
    pub start: u64,
    pub end: u64,
    pub mean: f64,
    pub std_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupermartingaleVerdict {
    pub replays: usize,
    pub strata: Vec<StratumStat>,
    pub pass: bool,
}

impl SupermartingaleVerdict {
    pub fn worst_margin(&self) -> f64 {
        self.strata
            .iter()
            .map(|s| s.mean - 3.0 * s.std_err)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Stratified one-sided test: each stratum of `stratum_len` steps passes when
/// the replay mean of the per-replay average of `D_k` is at most 3 standard
/// errors (plus `tol_abs`) above zero.
pub fn supermartingale_verdict(runs: &[Vec<TraceRecord>], stratum_len: usize, tol_abs: f64) -> Result<SupermartingaleVerdict> {
    if runs.len() < 2 {
        return Err(ApalmError::Config("the statistical verdict needs at least two replays".into()));
    }
    let steps = runs.iter().map(|r| r.len().saturating_sub(1)).min().unwrap_or(0);
    if steps == 0 {
        return Err(ApalmError::MonitoringWindow("replays contain no steps".into()));
    }
    for r in runs {
        if r.iter().skip(1).any(|x| x.y_decrease.is_nan()) {
            return Err(ApalmError::Schema("replay trace lacks the expected-decrease column".into()));
        }
    }
    let stratum_len = stratum_len.max(1);
    let n = runs.len() as f64;
    let mut strata = Vec::new();
    let mut start = 0;
    while start < steps {
        let end = (start + stratum_len).min(steps);
        let vals: Vec<f64> = runs
            .iter()
            .map(|r| {
                (start..end)
                    .map(|k| r[k + 1].phi - r[k].phi + r[k + 1].y_decrease)
                    .sum::<f64>()
                    / (end - start) as f64
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let std_err = (var / n).sqrt();
        strata.push(StratumStat {
            start: start as u64,
            end: end as u64,
            mean,
            std_err,
            pass: mean <= 3.0 * std_err + tol_abs,
        });
        start = end;
    }
    let pass = strata.iter().all(|s| s.pass);
    Ok(SupermartingaleVerdict {
        replays: runs.len(),
        strata,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::block::BlockSpace;
    use crate::problem::FnLoss;
    use crate::prox::Regularizer;

    fn square_problem() -> Problem {
        // f(x) = x^2 on one scalar block
        let f = FnLoss::new(
            |x| x.block(0)[0] * x.block(0)[0],
            |x, _, out| out[0] = 2.0 * x.block(0)[0],
            |_, _| 2.0,
        );
        Problem::new(BlockSpace::uniform(1, 1).unwrap(), Arc::new(f), vec![Regularizer::Zero]).unwrap()
    }

    #[test]
    fn lyapunov_hand_example() {
        let p = LyapunovParams {
            variant: Variant::Deterministic,
            m_glob: 2.0,
            tau: 2,
            m: 1,
            rho: 2,
        };
        assert!((p.coef() - 1.0).abs() < 1e-15);
        // window (x^k, x^{k-1}, x^{k-2}) = (3, 2, 2)
        let h = IterateHistory::new(BlockVector::from_scalars(&[2.0]), 8);
        h.commit(0, vec![2.0]).unwrap();
        h.commit(0, vec![3.0]).unwrap();
        let phi = lyapunov(&square_problem(), &h, 2, &p).unwrap();
        assert!((phi - 11.0).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_at_start_and_constant_window_is_psi() {
        let p = LyapunovParams {
            variant: Variant::Deterministic,
            m_glob: 3.0,
            tau: 3,
            m: 1,
            rho: 1,
        };
        let h = IterateHistory::new(BlockVector::from_scalars(&[1.5]), 8);
        let prob = square_problem();
        assert_eq!(lyapunov(&prob, &h, 0, &p).unwrap(), 2.25);
        for _ in 0..4 {
            h.commit(0, vec![1.5]).unwrap();
        }
        assert_eq!(lyapunov(&prob, &h, 4, &p).unwrap(), 2.25);
        let zero_tau = LyapunovParams { tau: 0, rho: 0, ..p };
        assert_eq!(zero_tau.lyapunov_from(7.0, &[1.0, 2.0]), 7.0);
    }

    fn row(k: u64, phi: f64) -> TraceRecord {
        TraceRecord {
            k,
            phi,
            psi: phi,
            ..TraceRecord::initial(phi)
        }
    }

    #[test]
    fn injected_violation_is_reported() {
        let mut rows: Vec<TraceRecord> = (0..10).map(|k| row(k, 10.0 - 0.1 * k as f64)).collect();
        assert!(check_decrease(&rows, 1e-9).is_empty());
        rows[4].phi += 1.0;
        rows[4].psi += 1.0;
        assert_eq!(check_decrease(&rows, 1e-9), vec![4]);
        let p = LyapunovParams {
            variant: Variant::Deterministic,
            m_glob: 1.0,
            tau: 0,
            m: 1,
            rho: 0,
        };
        assert_eq!(offline_checks(&rows, &p, true).phi_increase, vec![4]);
    }

    #[test]
    fn verdict_passes_on_decreasing_and_fails_on_increasing_drift() {
        let mk = |drift: f64, seed: u64| -> Vec<TraceRecord> {
            let mut phi = 0.0;
            (0..100)
                .map(|k| {
                    let noise = (((k as u64 * 2654435761 + seed * 97) % 1000) as f64 / 1000.0 - 0.5) * 1e-3;
                    if k > 0 {
                        phi += drift + noise;
                    }
                    TraceRecord {
                        y_decrease: 0.0,
                        ..row(k, phi)
                    }
                })
                .collect()
        };
        let down: Vec<_> = (0..30).map(|s| mk(-1e-2, s)).collect();
        assert!(supermartingale_verdict(&down, 10, 0.0).unwrap().pass);
        let up: Vec<_> = (0..30).map(|s| mk(1e-2, s)).collect();
        assert!(!supermartingale_verdict(&up, 10, 0.0).unwrap().pass);
    }
}
