//! Subgradient certificates built from each block's most recent prox step.

use crate::block::{dist_sq, BlockVector};
use crate::error::{ApalmError, Result};
use crate::problem::Problem;
use crate::solver::StepRule;

/// What the monitor keeps about the last update of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMeta {
    /// Block value the prox was anchored at.
    pub anchor: Vec<f64>,
    pub gamma: f64,
    /// Partial gradient at the delayed snapshot of that update.
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualCertificate {
    pub a_norm: f64,
    pub b_norm: f64,
    pub c_norm: f64,
    pub w_residual: f64,
}

/// Certificates at `x^{k+1}` after step `k` wrote block `jk`.
///
/// `delta` is `x_{jk}^{k+1} - x_{jk}^k`, `recent_steps[i]` is `|x^{k+1-i} - x^{k-i}|^2`
/// and `coef` the Lyapunov tail weight.
pub fn residuals(
    problem: &Problem,
    x_next: &BlockVector,
    metas: &[Option<BlockMeta>],
    jk: usize,
    delta: &[f64],
    recent_steps: &[f64],
    coef: f64,
    tau: usize,
) -> Result<ResidualCertificate> {
    let m = problem.num_blocks();
    let shift = 2.0 * coef * tau as f64;
    let mut c_sq = 0.0;
    let mut a_sq = 0.0;
    let mut grad = Vec::new();
    for i in 0..m {
        let meta = metas[i].as_ref().ok_or_else(|| {
            ApalmError::MonitoringWindow(format!("block {} has not been updated yet", i + 1))
        })?;
        grad.resize(problem.space().dim(i), 0.0);
        problem.partial_gradient_into(x_next, i, &mut grad)?;
        let xi = x_next.block(i);
        for t in 0..xi.len() {
            let c = (meta.anchor[t] - xi[t]) / meta.gamma + grad[t] - meta.gradient[t];
            c_sq += c * c;
            let a = if i == jk { c + shift * delta[t] } else { c };
            a_sq += a * a;
        }
    }
    let b_sq: f64 = (1..tau)
        .map(|i| {
            let w = 2.0 * coef * (tau - i) as f64;
            w * w * recent_steps.get(i).copied().unwrap_or(0.0)
        })
        .sum();
    Ok(ResidualCertificate {
        a_norm: a_sq.sqrt(),
        b_norm: b_sq.sqrt(),
        c_norm: c_sq.sqrt(),
        w_residual: f64::NAN,
    })
}

/// The full-update vector `w` at `x` (zero delay) with its stepsizes.
pub fn full_update(problem: &Problem, x: &BlockVector, rule: &StepRule) -> Result<(BlockVector, Vec<f64>)> {
    let mut w = x.clone();
    let mut gammas = Vec::with_capacity(problem.num_blocks());
    for j in 0..problem.num_blocks() {
        let g = problem.partial_gradient(x, j)?;
        let l = problem.coordinate_lipschitz(x, j)?;
        let gamma = rule.gamma(l, problem.regularizer(j).prox_bound());
        let v: Vec<f64> = x.block(j).iter().zip(&g).map(|(a, b)| a - gamma * b).collect();
        problem.regularizer(j).prox_into(&v, gamma, w.block_mut(j))?;
        gammas.push(gamma);
    }
    Ok((w, gammas))
}

/// `max_j(1/gamma_j) |x - w| + |grad f(w) - grad f(x)|`.
pub fn stochastic_residual(problem: &Problem, x: &BlockVector, rule: &StepRule) -> Result<f64> {
    let (w, gammas) = full_update(problem, x, rule)?;
    let inv = gammas.iter().map(|g| 1.0 / g).fold(0.0, f64::max);
    let gw = problem.full_gradient(&w)?;
    let gx = problem.full_gradient(x)?;
    Ok(inv * x.dist(&w) + gw.dist(&gx))
}

/// Smallest `c0` with `a + b <= c0 * sum_{h=k-tau-K}^{k} s_h` on every row with finite residuals.
///
/// `rows[k] = (a_norm + b_norm, step_norm into row k)`.
pub fn fit_c0(rows: &[(f64, f64)], tau: usize, k_window: usize) -> f64 {
    let mut best: f64 = 0.0;
    // row k+1 certifies x^{k+1}; its window sums steps k-tau-K..=k, i.e. rows k-tau-K+1..=k+1
    for r in 1..rows.len() {
        let (ab, _) = rows[r];
        if !ab.is_finite() {
            continue;
        }
        let lo = r.saturating_sub(tau + k_window);
        let s: f64 = rows[lo.max(1)..=r].iter().map(|row| row.1).sum();
        if s > 0.0 {
            best = best.max(ab / s);
        } else if ab > 0.0 {
            return f64::INFINITY;
        }
    }
    best
}

pub(crate) fn block_dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::block::BlockSpace;
    use crate::problem::SeparableQuadratic;
    use crate::prox::Regularizer;
    use crate::solver::Variant;

    fn quad() -> Problem {
        let smooth = SeparableQuadratic {
            curvature: vec![1.0],
            center: BlockVector::from_scalars(&[4.0]),
        };
        Problem::new(BlockSpace::uniform(1, 1).unwrap(), Arc::new(smooth), vec![Regularizer::Zero]).unwrap()
    }

    #[test]
    fn hand_evaluated_a_norm() {
        // x^k = 2, gamma = 0.5, no delay: x^{k+1} = 3
        let p = quad();
        let meta = BlockMeta {
            anchor: vec![2.0],
            gamma: 0.5,
            gradient: vec![-2.0],
        };
        let cert = residuals(&p, &BlockVector::from_scalars(&[3.0]), &[Some(meta)], 0, &[1.0], &[1.0], 0.0, 0)
            .unwrap();
        assert_eq!(cert.a_norm, 1.0);
        assert_eq!(cert.c_norm, 1.0);
        assert_eq!(cert.b_norm, 0.0);
    }

    #[test]
    fn stationary_point_has_zero_certificates() {
        let p = quad();
        let meta = BlockMeta {
            anchor: vec![4.0],
            gamma: 0.5,
            gradient: vec![0.0],
        };
        let x = BlockVector::from_scalars(&[4.0]);
        let cert = residuals(&p, &x, &[Some(meta)], 0, &[0.0], &[0.0, 0.0], 0.3, 2).unwrap();
        assert_eq!((cert.a_norm, cert.b_norm, cert.c_norm), (0.0, 0.0, 0.0));
        let rule = StepRule {
            variant: Variant::Stochastic,
            m_glob: 1.0,
            tau: 2,
            m: 1,
            rho: 0,
            c: 0.5,
        };
        assert_eq!(stochastic_residual(&p, &x, &rule).unwrap(), 0.0);
    }

    #[test]
    fn missing_block_metadata_is_a_window_error() {
        let p = quad();
        let err = residuals(&p, &BlockVector::from_scalars(&[3.0]), &[None], 0, &[1.0], &[], 0.0, 0);
        assert!(matches!(err, Err(ApalmError::MonitoringWindow(_))));
    }

    #[test]
    fn b_norm_weights_past_steps() {
        let p = quad();
        let meta = BlockMeta {
            anchor: vec![4.0],
            gamma: 1.0,
            gradient: vec![0.0],
        };
        // tau = 3, coef = 0.5: weights 2*0.5*(3-1) = 2 and 2*0.5*(3-2) = 1
        let cert = residuals(&p, &BlockVector::from_scalars(&[4.0]), &[Some(meta)], 0, &[0.0], &[9.0, 1.0, 4.0], 0.5, 3)
            .unwrap();
        assert!((cert.b_norm - (4.0f64 * 1.0 + 1.0 * 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn c0_fit_bounds_every_row() {
        let rows = vec![(f64::NAN, 0.0), (2.0, 1.0), (1.0, 0.5), (0.25, 0.1)];
        let c0 = fit_c0(&rows, 0, 1);
        for r in 1..rows.len() {
            let s: f64 = rows[r.saturating_sub(1).max(1)..=r].iter().map(|x| x.1).sum();
            assert!(rows[r].0 <= c0 * s + 1e-15);
        }
    }
}
