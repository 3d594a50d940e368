//! Block-structured problems `Psi(x) = f(x) + sum_j r_j(x_j)`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::{BlockSpace, BlockVector};
use crate::error::{ApalmError, Result};
use crate::prox::Regularizer;

/// Floor applied to block Lipschitz constants so stepsize formulas never divide by zero.
pub const LIPSCHITZ_FLOOR: f64 = 1e-12;

/// Default lower bound below which an objective evaluation fails the run.
pub const DEFAULT_PSI_FLOOR: f64 = -1e18;

/// The smooth coupling term `f` with its block oracles.
///
/// Implementations must be pure: evaluation only reads the point it is given.
pub trait SmoothLoss: Send + Sync {
    fn value(&self, x: &BlockVector) -> f64;

    /// Writes `grad_j f(x)` into `out` (length `dims[j]`).
    fn partial_gradient(&self, x: &BlockVector, j: usize, out: &mut [f64]);

    /// An upper bound on the Lipschitz constant of `y -> grad_j f(x_{-j}; y)`.
    fn block_lipschitz(&self, x: &BlockVector, j: usize) -> f64;
}

/// `f = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroLoss;

impl SmoothLoss for ZeroLoss {
    fn value(&self, _x: &BlockVector) -> f64 {
        0.0
    }

    fn partial_gradient(&self, _x: &BlockVector, _j: usize, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn block_lipschitz(&self, _x: &BlockVector, _j: usize) -> f64 {
        0.0
    }
}

/// `f(x) = sum_j (a_j / 2) |x_j - c_j|^2`.
#[derive(Debug, Clone)]
pub struct SeparableQuadratic {
    pub curvature: Vec<f64>,
    pub center: BlockVector,
}

impl SmoothLoss for SeparableQuadratic {
    fn value(&self, x: &BlockVector) -> f64 {
        self.curvature
            .iter()
            .enumerate()
            .map(|(j, a)| 0.5 * a * crate::block::dist_sq(x.block(j), self.center.block(j)))
            .sum()
    }

    fn partial_gradient(&self, x: &BlockVector, j: usize, out: &mut [f64]) {
        let a = self.curvature[j];
        for ((o, xi), ci) in out.iter_mut().zip(x.block(j)).zip(self.center.block(j)) {
            *o = a * (xi - ci);
        }
    }

    fn block_lipschitz(&self, _x: &BlockVector, j: usize) -> f64 {
        self.curvature[j].abs()
    }
}

type ValueFn = dyn Fn(&BlockVector) -> f64 + Send + Sync;
type GradFn = dyn Fn(&BlockVector, usize, &mut [f64]) + Send + Sync;
type LipFn = dyn Fn(&BlockVector, usize) -> f64 + Send + Sync;

/// A smooth loss assembled from user callables.
pub struct FnLoss {
    value: Box<ValueFn>,
    gradient: Box<GradFn>,
    lipschitz: Box<LipFn>,
}

impl FnLoss {
    pub fn new(
        value: impl Fn(&BlockVector) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&BlockVector, usize, &mut [f64]) + Send + Sync + 'static,
        lipschitz: impl Fn(&BlockVector, usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        FnLoss {
            value: Box::new(value),
            gradient: Box::new(gradient),
            lipschitz: Box::new(lipschitz),
        }
    }
}

impl SmoothLoss for FnLoss {
    fn value(&self, x: &BlockVector) -> f64 {
        (self.value)(x)
    }

    fn partial_gradient(&self, x: &BlockVector, j: usize, out: &mut [f64]) {
        (self.gradient)(x, j, out)
    }

    fn block_lipschitz(&self, x: &BlockVector, j: usize) -> f64 {
        (self.lipschitz)(x, j)
    }
}

/// How the global constant `M` is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GlobalLipschitz {
    Fixed(f64),
    /// Estimated on the level set of `x^0`; needs coercivity metadata.
    Auto,
}

#[derive(Clone)]
pub struct Problem {
    space: BlockSpace,
    smooth: Arc<dyn SmoothLoss>,
    regs: Vec<Regularizer>,
    global_m: GlobalLipschitz,
    coercive: bool,
    psi_floor: f64,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("space", &self.space)
            .field("regs", &self.regs)
            .field("global_m", &self.global_m)
            .field("coercive", &self.coercive)
            .finish_non_exhaustive()
    }
}

impl Problem {
    pub fn new(space: BlockSpace, smooth: Arc<dyn SmoothLoss>, regs: Vec<Regularizer>) -> Result<Self> {
        if regs.len() != space.num_blocks() {
            return Err(ApalmError::Dimension(format!(
                "{} regularizers for {} blocks",
                regs.len(),
                space.num_blocks()
            )));
        }
        for r in &regs {
            r.validated()?;
        }
        Ok(Problem {
            space,
            smooth,
            regs,
            global_m: GlobalLipschitz::Auto,
            coercive: false,
            psi_floor: DEFAULT_PSI_FLOOR,
        })
    }

    pub fn with_global_lipschitz(mut self, m: GlobalLipschitz) -> Result<Self> {
        if let GlobalLipschitz::Fixed(v) = m {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ApalmError::Config(format!("M must be positive, got {v}")));
            }
        }
        self.global_m = m;
        Ok(self)
    }

    /// Declares `Psi` coercive, which enables the `M = auto` estimate.
    pub fn with_coercivity(mut self, coercive: bool) -> Self {
        self.coercive = coercive;
        self
    }

    pub fn with_psi_floor(mut self, floor: f64) -> Self {
        self.psi_floor = floor;
        self
    }

    pub fn space(&self) -> &BlockSpace {
        &self.space
    }

    pub fn num_blocks(&self) -> usize {
        self.space.num_blocks()
    }

    pub fn regularizer(&self, j: usize) -> &Regularizer {
        &self.regs[j]
    }

    pub fn regularizers(&self) -> &[Regularizer] {
        &self.regs
    }

    pub fn smooth(&self) -> &dyn SmoothLoss {
        self.smooth.as_ref()
    }

    pub fn global_lipschitz(&self) -> GlobalLipschitz {
        self.global_m
    }

    pub fn is_coercive(&self) -> bool {
        self.coercive
    }

    pub fn psi_floor(&self) -> f64 {
        self.psi_floor
    }

    /// Smallest prox bound over all blocks.
    pub fn min_prox_bound(&self) -> f64 {
        self.regs.iter().map(|r| r.prox_bound()).fold(f64::INFINITY, f64::min)
    }

    pub fn smooth_value(&self, x: &BlockVector) -> Result<f64> {
        self.space.check(x)?;
        Ok(self.smooth.value(x))
    }

    pub fn reg_value(&self, x: &BlockVector) -> f64 {
        self.regs.iter().enumerate().map(|(j, r)| r.value(x.block(j))).sum()
    }

    /// `Psi(x) = f(x) + sum_j r_j(x_j)`; `+inf` when an indicator is violated.
    pub fn psi_value(&self, x: &BlockVector) -> Result<f64> {
        self.space.check(x)?;
        let r = self.reg_value(x);
        if r == f64::INFINITY {
            return Ok(f64::INFINITY);
        }
        let v = self.smooth.value(x) + r;
        if v.is_nan() || v < self.psi_floor {
            return Err(ApalmError::Unbounded {
                value: v,
                bound: self.psi_floor,
            });
        }
        Ok(v)
    }

    pub fn partial_gradient(&self, x: &BlockVector, j: usize) -> Result<Vec<f64>> {
        self.space.check_block(j)?;
        let mut out = vec![0.0; self.space.dim(j)];
        self.partial_gradient_into(x, j, &mut out)?;
        Ok(out)
    }

    pub fn partial_gradient_into(&self, x: &BlockVector, j: usize, out: &mut [f64]) -> Result<()> {
        self.space.check(x)?;
        self.space.check_block(j)?;
        if out.len() != self.space.dim(j) {
            return Err(ApalmError::Dimension(format!(
                "gradient buffer of length {} for block {} of dimension {}",
                out.len(),
                j + 1,
                self.space.dim(j)
            )));
        }
        self.smooth.partial_gradient(x, j, out);
        if out.iter().any(|g| !g.is_finite()) {
            return Err(ApalmError::NonFiniteGradient { block: j + 1 });
        }
        Ok(())
    }

    pub fn full_gradient(&self, x: &BlockVector) -> Result<BlockVector> {
        let mut g = self.space.zeros();
        for j in 0..self.num_blocks() {
            self.partial_gradient_into(x, j, g.block_mut(j))?;
        }
        Ok(g)
    }

    /// Upper bound on the block Lipschitz constant, floored at [`LIPSCHITZ_FLOOR`].
    pub fn coordinate_lipschitz(&self, x: &BlockVector, j: usize) -> Result<f64> {
        self.space.check(x)?;
        self.space.check_block(j)?;
        let l = self.smooth.block_lipschitz(x, j);
        if l.is_nan() {
            return Err(ApalmError::NonFiniteGradient { block: j + 1 });
        }
        Ok(l.max(LIPSCHITZ_FLOOR))
    }

    /// Resolves `M`: the fixed value, or the level-set estimate seeded by `seed`.
    pub fn resolve_global_lipschitz(&self, x0: &BlockVector, seed: u64) -> Result<f64> {
        match self.global_m {
            GlobalLipschitz::Fixed(m) => Ok(m),
            GlobalLipschitz::Auto => estimate_level_set_lipschitz(self, x0, seed),
        }
    }
}

const LEVEL_SET_WALK_STEPS: usize = 4000;
const LIPSCHITZ_PAIRS: usize = 10_000;
const LIPSCHITZ_SAFETY: f64 = 2.0;
const BOX_INFLATION: f64 = 0.10;

/// Estimates a Lipschitz constant of `grad f` on the minimal box around the
/// level set `{Psi <= Psi(x0)}`.
///
/// The level set is explored by a random walk that only accepts moves staying
/// inside it; the bounding box of the visited points is inflated by 10% and
/// `M` is twice the largest gradient-difference ratio over uniformly drawn
/// pairs in that box.
pub fn estimate_level_set_lipschitz(problem: &Problem, x0: &BlockVector, seed: u64) -> Result<f64> {
    if !problem.is_coercive() {
        return Err(ApalmError::Config(
            "M = auto needs a coercive problem; set M explicitly".into(),
        ));
    }
    let level = problem.psi_value(x0)?;
    if !level.is_finite() {
        return Err(ApalmError::Config("Psi(x0) is not finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c65_7665_6c5f_7365);
    let n = problem.space().total_dim();
    let flat0: Vec<f64> = x0.iter_flat().collect();
    let mut lo = flat0.clone();
    let mut hi = flat0.clone();

    let rms = (x0.norm_sq() / n as f64).sqrt();
    let mut scale = 0.1 * rms.max(1e-2);
    let mut current = x0.clone();
    let mut accepted = 0usize;
    for step in 1..=LEVEL_SET_WALK_STEPS {
        let mut proposal = current.clone();
        for j in 0..proposal.num_blocks() {
            for v in proposal.block_mut(j).iter_mut() {
                *v += scale * rng.random_range(-1.0..1.0);
            }
        }
        if problem.psi_value(&proposal).map(|p| p <= level).unwrap_or(false) {
            current = proposal;
            accepted += 1;
            for (i, v) in current.iter_flat().enumerate() {
                lo[i] = lo[i].min(v);
                hi[i] = hi[i].max(v);
            }
        }
        if step % 100 == 0 {
            let rate = accepted as f64 / 100.0;
            if rate < 0.2 {
                scale *= 0.5;
            } else if rate > 0.5 {
                scale *= 2.0;
            }
            accepted = 0;
        }
    }

    for i in 0..n {
        let width = (hi[i] - lo[i]).max(1e-3 * lo[i].abs().max(hi[i].abs()).max(1.0));
        lo[i] -= 0.5 * BOX_INFLATION * width;
        hi[i] += 0.5 * BOX_INFLATION * width;
    }

    let dims = problem.space().dims().to_vec();
    let draw = |rng: &mut ChaCha8Rng| {
        let mut flat = (0..n).map(|i| rng.random_range(lo[i]..=hi[i]));
        BlockVector::from_blocks(
            dims.iter()
                .map(|&d| (0..d).map(|_| flat.next().unwrap()).collect())
                .collect(),
        )
    };
    let mut best = 0.0f64;
    for _ in 0..LIPSCHITZ_PAIRS {
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let dx = a.dist(&b);
        if dx == 0.0 {
            continue;
        }
        let ga = problem.full_gradient(&a)?;
        let gb = problem.full_gradient(&b)?;
        best = best.max(ga.dist(&gb) / dx);
    }
    Ok((LIPSCHITZ_SAFETY * best).max(LIPSCHITZ_FLOOR))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shifted_quadratic() -> Problem {
        // f = (x - 4)^2 / 2, one scalar block
        let loss = SeparableQuadratic {
            curvature: vec![1.0],
            center: BlockVector::from_scalars(&[4.0]),
        };
        Problem::new(BlockSpace::uniform(1, 1).unwrap(), Arc::new(loss), vec![Regularizer::Zero]).unwrap()
    }

    #[test]
    fn psi_of_zero_point() {
        let loss = SeparableQuadratic {
            curvature: vec![1.0],
            center: BlockVector::from_scalars(&[0.0]),
        };
        let p = Problem::new(BlockSpace::uniform(1, 1).unwrap(), Arc::new(loss), vec![Regularizer::Zero]).unwrap();
        assert_eq!(p.psi_value(&BlockVector::from_scalars(&[0.0])).unwrap(), 0.0);
    }

    #[test]
    fn psi_infinite_off_indicator() {
        let loss = SeparableQuadratic {
            curvature: vec![1.0],
            center: BlockVector::from_scalars(&[0.0]),
        };
        let p = Problem::new(
            BlockSpace::uniform(1, 1).unwrap(),
            Arc::new(loss),
            vec![Regularizer::IndicatorNonneg],
        )
        .unwrap();
        assert_eq!(p.psi_value(&BlockVector::from_scalars(&[-1.0])).unwrap(), f64::INFINITY);
    }

    #[test]
    fn affine_gradient_and_curvature() {
        let p = shifted_quadratic();
        let x = BlockVector::from_scalars(&[0.0]);
        assert_eq!(p.partial_gradient(&x, 0).unwrap(), vec![-4.0]);
        assert_eq!(p.coordinate_lipschitz(&x, 0).unwrap(), 1.0);
    }

    #[test]
    fn zero_loss_hits_floor() {
        let p = Problem::new(BlockSpace::uniform(1, 1).unwrap(), Arc::new(ZeroLoss), vec![Regularizer::Zero]).unwrap();
        let x = BlockVector::from_scalars(&[3.0]);
        assert_eq!(p.coordinate_lipschitz(&x, 0).unwrap(), LIPSCHITZ_FLOOR);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = shifted_quadratic();
        let x = BlockVector::from_scalars(&[0.0, 1.0]);
        assert!(matches!(p.psi_value(&x), Err(ApalmError::Dimension(_))));
        assert!(matches!(p.partial_gradient(&x, 0), Err(ApalmError::Dimension(_))));
        let ok = BlockVector::from_scalars(&[0.0]);
        assert!(matches!(p.partial_gradient(&ok, 3), Err(ApalmError::BlockIndex { .. })));
    }

    #[test]
    fn non_finite_gradient_flags_oracle() {
        let loss = FnLoss::new(|_| 0.0, |_, _, out| out.fill(f64::NAN), |_, _| 1.0);
        let p = Problem::new(BlockSpace::uniform(1, 1).unwrap(), Arc::new(loss), vec![Regularizer::Zero]).unwrap();
        let x = BlockVector::from_scalars(&[0.0]);
        assert!(matches!(p.partial_gradient(&x, 0), Err(ApalmError::NonFiniteGradient { block: 1 })));
    }

    #[test]
    fn psi_below_floor_fails() {
        let loss = FnLoss::new(|x| -x.block(0)[0].powi(2), |_, _, out| out.fill(0.0), |_, _| 1.0);
        let p = Problem::new(BlockSpace::uniform(1, 1).unwrap(), Arc::new(loss), vec![Regularizer::Zero])
            .unwrap()
            .with_psi_floor(-10.0);
        assert!(p.psi_value(&BlockVector::from_scalars(&[3.0])).is_ok());
        assert!(matches!(
            p.psi_value(&BlockVector::from_scalars(&[4.0])),
            Err(ApalmError::Unbounded { .. })
        ));
    }

    #[test]
    fn auto_m_requires_coercivity() {
        let p = shifted_quadratic();
        let x = BlockVector::from_scalars(&[0.0]);
        assert!(matches!(p.resolve_global_lipschitz(&x, 1), Err(ApalmError::Config(_))));
    }

    #[test]
    fn auto_m_on_quadratic_is_twice_the_curvature() {
        let loss = SeparableQuadratic {
            curvature: vec![3.0, 1.0],
            center: BlockVector::from_scalars(&[1.0, -1.0]),
        };
        let p = Problem::new(
            BlockSpace::uniform(2, 1).unwrap(),
            Arc::new(loss),
            vec![Regularizer::Zero, Regularizer::Zero],
        )
        .unwrap()
        .with_coercivity(true);
        let m = p.resolve_global_lipschitz(&BlockVector::from_scalars(&[0.0, 0.0]), 3).unwrap();
        // true constant is 3; the estimate is 2 * (sampled max ratio <= 3)
        assert!(m <= 6.0 + 1e-9, "{m}");
        assert!(m >= 3.0, "{m}");
    }
}
