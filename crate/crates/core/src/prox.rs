//! Regularizers with deterministic proximal selections.
//!
//! The prox of `r` at `v` with stepsize `gamma` is a minimizer of
//! `r(y) + |y - v|^2 / (2 gamma)`. For the nonconvex kinds the argmin can be
//! multivalued; the selection returned here is the candidate of smallest
//! Euclidean norm, ties broken lexicographically. In practice only `l0` has
//! ties (at `|v_i| = sqrt(2 gamma w)`), where the zero candidate is kept.

use std::fmt;
use std::str::FromStr;

use crate::block::norm_sq;
use crate::error::{ApalmError, Result};

/// Finite prox bounds are used strictly below this fraction of their value.
pub const PROX_BOUND_STRICTNESS: f64 = 1.0 - 1e-9;

/// Relative slack used when testing membership of a radial projection.
const BALL_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    Zero,
    /// `weight * |y|_1`
    L1 { weight: f64 },
    /// `weight * |y|_0` (number of nonzero coordinates)
    L0 { weight: f64 },
    IndicatorNonneg,
    /// Indicator of `[lo, hi]` applied to every coordinate.
    IndicatorBox { lo: f64, hi: f64 },
    /// Indicator of the Euclidean ball of the given radius.
    IndicatorBall { radius: f64 },
    /// `-alpha * |y|^2`; prox-bounded with `lambda_r = 1 / (2 alpha)`.
    NegQuadratic { alpha: f64 },
    /// `weight * |y|^2`
    SquaredL2 { weight: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxResult {
    pub point: Vec<f64>,
    pub value: f64,
}

impl Regularizer {
    pub fn l1(weight: f64) -> Result<Self> {
        Regularizer::L1 { weight }.validated()
    }

    pub fn l0(weight: f64) -> Result<Self> {
        Regularizer::L0 { weight }.validated()
    }

    pub fn indicator_box(lo: f64, hi: f64) -> Result<Self> {
        Regularizer::IndicatorBox { lo, hi }.validated()
    }

    pub fn indicator_ball(radius: f64) -> Result<Self> {
        Regularizer::IndicatorBall { radius }.validated()
    }

    pub fn neg_quadratic(alpha: f64) -> Result<Self> {
        Regularizer::NegQuadratic { alpha }.validated()
    }

    pub fn squared_l2(weight: f64) -> Result<Self> {
        Regularizer::SquaredL2 { weight }.validated()
    }

    /// Checks the sign constraints of the parameters.
    pub fn validated(self) -> Result<Self> {
        let ok = match self {
            Regularizer::Zero | Regularizer::IndicatorNonneg => true,
            Regularizer::L1 { weight } | Regularizer::L0 { weight } | Regularizer::SquaredL2 { weight } => {
                weight.is_finite() && weight >= 0.0
            }
            Regularizer::IndicatorBox { lo, hi } => !lo.is_nan() && !hi.is_nan() && lo <= hi,
            Regularizer::IndicatorBall { radius } => radius.is_finite() && radius > 0.0,
            Regularizer::NegQuadratic { alpha } => alpha.is_finite() && alpha > 0.0,
        };
        if ok {
            Ok(self)
        } else {
            Err(ApalmError::Regularizer(format!("invalid parameters for {self}")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regularizer::Zero => "zero",
            Regularizer::L1 { .. } => "l1",
            Regularizer::L0 { .. } => "l0",
            Regularizer::IndicatorNonneg => "indicator_nonneg",
            Regularizer::IndicatorBox { .. } => "indicator_box",
            Regularizer::IndicatorBall { .. } => "indicator_ball",
            Regularizer::NegQuadratic { .. } => "neg_quadratic",
            Regularizer::SquaredL2 { .. } => "squared_l2",
        }
    }

    /// `r(y)`, `+inf` outside the domain of an indicator.
    pub fn value(&self, y: &[f64]) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            Regularizer::L1 { weight } => weight * y.iter().map(|v| v.abs()).sum::<f64>(),
            Regularizer::L0 { weight } => weight * y.iter().filter(|v| **v != 0.0).count() as f64,
            Regularizer::IndicatorNonneg => {
                if y.iter().all(|v| *v >= 0.0) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Regularizer::IndicatorBox { lo, hi } => {
                if y.iter().all(|v| *v >= lo && *v <= hi) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Regularizer::IndicatorBall { radius } => {
                if norm_sq(y).sqrt() <= radius * (1.0 + BALL_SLACK) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Regularizer::NegQuadratic { alpha } => -alpha * norm_sq(y),
            Regularizer::SquaredL2 { weight } => weight * norm_sq(y),
        }
    }

    /// The prox-boundedness threshold `lambda_r`.
    pub fn prox_bound(&self) -> f64 {
        match *self {
            Regularizer::NegQuadratic { alpha } => 1.0 / (2.0 * alpha),
            _ => f64::INFINITY,
        }
    }

    /// Deterministic prox selection at `v` with stepsize `gamma`.
    pub fn prox(&self, v: &[f64], gamma: f64) -> Result<ProxResult> {
        let mut point = vec![0.0; v.len()];
        self.prox_into(v, gamma, &mut point)?;
        let value = self.value(&point);
        Ok(ProxResult { point, value })
    }

    /// Same as [`Regularizer::prox`] without the allocation; writes the point into `out`.
    pub fn prox_into(&self, v: &[f64], gamma: f64, out: &mut [f64]) -> Result<()> {
        let bound = self.prox_bound();
        if !(gamma > 0.0) || !gamma.is_finite() || (bound.is_finite() && gamma >= bound) {
            return Err(ApalmError::StepsizeDomain { gamma, bound });
        }
        if out.len() != v.len() {
            return Err(ApalmError::Dimension(format!(
                "prox output has length {}, input {}",
                out.len(),
                v.len()
            )));
        }
        match *self {
            Regularizer::Zero => out.copy_from_slice(v),
            Regularizer::L1 { weight } => {
                let t = gamma * weight;
                for (o, &x) in out.iter_mut().zip(v) {
                    *o = x.signum() * (x.abs() - t).max(0.0);
                }
            }
            Regularizer::L0 { weight } => {
                // keep v_i iff v_i^2 / (2 gamma) > weight; equality keeps 0
                let threshold_sq = 2.0 * gamma * weight;
                for (o, &x) in out.iter_mut().zip(v) {
                    *o = if x * x > threshold_sq { x } else { 0.0 };
                }
            }
            Regularizer::IndicatorNonneg => {
                for (o, &x) in out.iter_mut().zip(v) {
                    *o = x.max(0.0);
                }
            }
            Regularizer::IndicatorBox { lo, hi } => {
                for (o, &x) in out.iter_mut().zip(v) {
                    *o = x.clamp(lo, hi);
                }
            }
            Regularizer::IndicatorBall { radius } => {
                let n = norm_sq(v).sqrt();
                let scale = if n > radius { radius / n } else { 1.0 };
                for (o, &x) in out.iter_mut().zip(v) {
                    *o = x * scale;
                }
            }
            Regularizer::NegQuadratic { alpha } => {
                let scale = 1.0 / (1.0 - 2.0 * gamma * alpha);
                for (o, &x) in out.iter_mut().zip(v) {
                    *o = x * scale;
                }
            }
            Regularizer::SquaredL2 { weight } => {
                let scale = 1.0 / (1.0 + 2.0 * gamma * weight);
                for (o, &x) in out.iter_mut().zip(v) {
                    *o = x * scale;
                }
            }
        }
        Ok(())
    }

    /// `r(y) + |y - v|^2 / (2 gamma)`
    pub fn prox_objective(&self, y: &[f64], v: &[f64], gamma: f64) -> f64 {
        let d: f64 = y.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        self.value(y) + d / (2.0 * gamma)
    }
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Regularizer::Zero | Regularizer::IndicatorNonneg => write!(f, "{}", self.name()),
            Regularizer::L1 { weight } | Regularizer::L0 { weight } | Regularizer::SquaredL2 { weight } => {
                write!(f, "{}:{}", self.name(), weight)
            }
            Regularizer::IndicatorBox { lo, hi } => write!(f, "{}:{}:{}", self.name(), lo, hi),
            Regularizer::IndicatorBall { radius } => write!(f, "{}:{}", self.name(), radius),
            Regularizer::NegQuadratic { alpha } => write!(f, "{}:{}", self.name(), alpha),
        }
    }
}

/// Parses `kind[:param[:param]]`, e.g. `l1:0.5` or `indicator_box:0:1`.
impl FromStr for Regularizer {
    type Err = ApalmError;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let kind = parts.next().unwrap_or_default();
        let params: Vec<f64> = parts
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| ApalmError::Regularizer(format!("bad parameter {p:?} in {s:?}")))
            })
            .collect::<Result<_>>()?;
        let arity = |n: usize| -> Result<()> {
            if params.len() == n {
                Ok(())
            } else {
                Err(ApalmError::Regularizer(format!(
                    "{kind} takes {n} parameter(s), got {} in {s:?}",
                    params.len()
                )))
            }
        };
        let reg = match kind {
            "zero" => {
                arity(0)?;
                Regularizer::Zero
            }
            "indicator_nonneg" => {
                arity(0)?;
                Regularizer::IndicatorNonneg
            }
            "l1" => {
                arity(1)?;
                Regularizer::L1 { weight: params[0] }
            }
            "l0" => {
                arity(1)?;
                Regularizer::L0 { weight: params[0] }
            }
            "squared_l2" => {
                arity(1)?;
                Regularizer::SquaredL2 { weight: params[0] }
            }
            "indicator_ball" => {
                arity(1)?;
                Regularizer::IndicatorBall { radius: params[0] }
            }
            "neg_quadratic" => {
                arity(1)?;
                Regularizer::NegQuadratic { alpha: params[0] }
            }
            "indicator_box" => {
                arity(2)?;
                Regularizer::IndicatorBox {
                    lo: params[0],
                    hi: params[1],
                }
            }
            other => return Err(ApalmError::Regularizer(format!("unknown regularizer kind {other:?}"))),
        };
        reg.validated()
    }
}
