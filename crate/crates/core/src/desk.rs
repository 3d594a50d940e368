//! Small bundled GLRM instances used by the configs, tests and benchmarks.

use std::str::FromStr;

use crate::block::BlockVector;
use crate::error::{ApalmError, Result};
use crate::glrm::{build_glrm, initial_point, DataMatrix, EntryLoss, GlrmSpec};
use crate::problem::Problem;
use crate::prox::Regularizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeskProblem {
    /// 6 x 4 nonnegative factorization, rank 2.
    Nmf,
    /// Rank-2 factorization of an 8 x 8 covariance with l0 column factors.
    SparsePca,
    /// 8 points in R^3, soft assignments in [0, 1]^2 against two centers.
    QuadCluster,
}

pub const ALL: [DeskProblem; 3] = [DeskProblem::Nmf, DeskProblem::SparsePca, DeskProblem::QuadCluster];

/// The factorization orbit contracts at roughly `mu / sigma_1(A)` per sweep,
/// so the data are kept small relative to `mu = 1e-3`.
pub const NMF_SCALE: f64 = 0.02;

const NMF_DATA: [[f64; 4]; 6] = [
    [1.03, 0.68, 0.43, 0.85],
    [0.83, 0.79, 0.61, 0.87],
    [0.23, 0.75, 1.00, 0.46],
    [0.64, 0.71, 0.72, 0.73],
    [0.44, 0.81, 0.97, 0.65],
    [1.18, 0.64, 0.35, 0.95],
];

const SPCA_DATA: [[f64; 8]; 8] = [
    [1.12, 1.02, 1.02, 0.02, 0.02, 0.02, 0.02, 0.02],
    [1.02, 1.12, 1.02, 0.02, 0.02, 0.02, 0.02, 0.02],
    [1.02, 1.02, 1.12, 0.02, 0.02, 0.02, 0.02, 0.02],
    [0.02, 0.02, 0.02, 0.12, 0.02, 0.02, 0.02, 0.02],
    [0.02, 0.02, 0.02, 0.02, 0.62, -0.48, 0.52, 0.02],
    [0.02, 0.02, 0.02, 0.02, -0.48, 0.62, -0.48, 0.02],
    [0.02, 0.02, 0.02, 0.02, 0.52, -0.48, 0.62, 0.02],
    [0.02, 0.02, 0.02, 0.02, 0.02, 0.02, 0.02, 0.12],
];

const CLUSTER_DATA: [[f64; 3]; 8] = [
    [1.02, -0.02, 1.75],
    [-1.05, 2.00, 0.01],
    [0.85, -0.05, 1.90],
    [-1.08, 2.11, -0.08],
    [1.00, 0.09, 1.94],
    [-1.01, 2.01, 0.01],
    [0.88, 0.01, 2.14],
    [-1.15, 2.09, 0.01],
];

fn matrix<const C: usize>(rows: &[[f64; C]]) -> DataMatrix {
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
    DataMatrix::from_rows(&rows).expect("bundled data is rectangular")
}

impl DeskProblem {
    pub fn name(&self) -> &'static str {
        match self {
            DeskProblem::Nmf => "nmf_desk",
            DeskProblem::SparsePca => "sparse_pca_desk",
            DeskProblem::QuadCluster => "quad_cluster_desk",
        }
    }

    pub fn data(&self) -> DataMatrix {
        match self {
            DeskProblem::Nmf => {
                let rows: Vec<Vec<f64>> = NMF_DATA.iter().map(|r| r.iter().map(|v| v * NMF_SCALE).collect()).collect();
                DataMatrix::from_rows(&rows).expect("bundled data is rectangular")
            }
            DeskProblem::SparsePca => matrix(&SPCA_DATA),
            DeskProblem::QuadCluster => matrix(&CLUSTER_DATA),
        }
    }

    pub fn spec(&self) -> GlrmSpec {
        match self {
            DeskProblem::Nmf => GlrmSpec {
                rank: 2,
                loss: EntryLoss::Quadratic,
                row_reg: Regularizer::IndicatorNonneg,
                col_reg: Regularizer::IndicatorNonneg,
                mu: 1e-3,
            },
            DeskProblem::SparsePca => GlrmSpec {
                rank: 2,
                loss: EntryLoss::Quadratic,
                row_reg: Regularizer::Zero,
                col_reg: Regularizer::L0 { weight: 0.01 },
                mu: 1e-2,
            },
            DeskProblem::QuadCluster => GlrmSpec {
                rank: 2,
                loss: EntryLoss::Quadratic,
                row_reg: Regularizer::IndicatorBox { lo: 0.0, hi: 1.0 },
                col_reg: Regularizer::Zero,
                mu: 1e-3,
            },
        }
    }

    pub fn problem(&self) -> Problem {
        build_glrm(&self.spec(), self.data()).expect("bundled specs are valid")
    }

    pub fn initial_point(&self, seed: u64) -> BlockVector {
        let data = self.data();
        initial_point(data.rows(), data.cols(), self.spec().rank, seed)
    }
}

impl FromStr for DeskProblem {
    type Err = ApalmError;
    fn from_str(s: &str) -> Result<Self> {
        ALL.into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| ApalmError::Config(format!("unknown desk problem {s:?}")))
    }
}
