//! Generalized low rank models.
//!
//! Blocks `0..d1` are the row factors `x_{i,1}`, blocks `d1..d1+d2` the column
//! factors `x_{l,2}`, all of dimension `d`. The smooth part is
//!
//! ```text
//! f(x) = sum_{(i,l) observed} f_il(<x_{i,1}, x_{l,2}>; A_il) + mu * |x|^2
//! ```
//!
//! The block Lipschitz bound for a row factor is `sum_l |x_{l,2}|^2 L_il + 2 mu`
//! (and symmetrically for columns).

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::{dot, norm_sq, BlockSpace, BlockVector};
use crate::error::{ApalmError, Result};
use crate::problem::{Problem, SmoothLoss};
use crate::prox::Regularizer;

/// Per-entry loss `f_il(a; A_il)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntryLoss {
    /// `(a - A)^2 / 2`
    Quadratic,
    /// Huber of the residual `a - A` with threshold `delta`.
    Huber { delta: f64 },
    /// `log(1 + exp(-A a))` for labels `A` (typically +-1).
    Logistic,
}

impl EntryLoss {
    pub fn value(&self, a: f64, target: f64) -> f64 {
        match *self {
            EntryLoss::Quadratic => 0.5 * (a - target) * (a - target),
            EntryLoss::Huber { delta } => {
                let r = (a - target).abs();
                if r <= delta {
                    0.5 * r * r
                } else {
                    delta * (r - 0.5 * delta)
                }
            }
            EntryLoss::Logistic => softplus(-target * a),
        }
    }

    /// Derivative in `a`.
    pub fn derivative(&self, a: f64, target: f64) -> f64 {
        match *self {
            EntryLoss::Quadratic => a - target,
            EntryLoss::Huber { delta } => (a - target).clamp(-delta, delta),
            EntryLoss::Logistic => -target * sigmoid(-target * a),
        }
    }

    /// Lipschitz constant `L_il` of the derivative.
    pub fn curvature(&self, target: f64) -> f64 {
        match *self {
            EntryLoss::Quadratic | EntryLoss::Huber { .. } => 1.0,
            EntryLoss::Logistic => 0.25 * target * target,
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for EntryLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntryLoss::Quadratic => f.write_str("quadratic"),
            EntryLoss::Huber { delta } => write!(f, "huber:{delta}"),
            EntryLoss::Logistic => f.write_str("logistic"),
        }
    }
}

impl FromStr for EntryLoss {
    type Err = ApalmError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "quadratic" => Ok(EntryLoss::Quadratic),
            "logistic" => Ok(EntryLoss::Logistic),
            _ => {
                if let Some(rest) = s.strip_prefix("huber:") {
                    let delta: f64 = rest
                        .parse()
                        .map_err(|_| ApalmError::Config(format!("bad huber threshold in {s:?}")))?;
                    if delta > 0.0 && delta.is_finite() {
                        return Ok(EntryLoss::Huber { delta });
                    }
                }
                Err(ApalmError::Config(format!("unknown loss {s:?}")))
            }
        }
    }
}

/// A real matrix with an optional observation mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl DataMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>, mask: Option<Vec<bool>>) -> Result<Self> {
        if rows == 0 || cols == 0 || entries.len() != rows * cols {
            return Err(ApalmError::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        if let Some(m) = &mask {
            if m.len() != entries.len() {
                return Err(ApalmError::Dimension("mask shape differs from data".into()));
            }
        }
        Ok(DataMatrix {
            rows,
            cols,
            entries,
            mask,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(ApalmError::Dimension("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat(), None)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, l: usize) -> f64 {
        self.entries[i * self.cols + l]
    }

    pub fn set(&mut self, i: usize, l: usize, v: f64) {
        self.entries[i * self.cols + l] = v;
    }

    pub fn observed(&self, i: usize, l: usize) -> bool {
        self.mask.as_ref().map(|m| m[i * self.cols + l]).unwrap_or(true)
    }

    pub fn observed_count(&self) -> usize {
        self.mask
            .as_ref()
            .map(|m| m.iter().filter(|b| **b).count())
            .unwrap_or(self.entries.len())
    }

    pub fn has_mask(&self) -> bool {
        self.mask.is_some()
    }

    /// CSV text with `?` for unobserved entries.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rows {
            let line: Vec<String> = (0..self.cols)
                .map(|l| {
                    if self.observed(i, l) {
                        format!("{}", self.get(i, l))
                    } else {
                        "?".to_string()
                    }
                })
                .collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Reads a CSV matrix from disk; see [`parse_matrix`].
pub fn load_matrix(path: &Path) -> Result<DataMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| ApalmError::io(path, e))?;
    parse_matrix(&text, path)
}

/// One row per line, comma-separated reals; `?` marks an unobserved entry.
pub fn parse_matrix(text: &str, origin: &Path) -> Result<DataMatrix> {
    let err = |line: usize, column: usize, message: String| ApalmError::Parse {
        path: origin.to_path_buf(),
        line,
        column,
        message,
    };
    let mut entries = Vec::new();
    let mut mask = Vec::new();
    let mut cols: Option<usize> = None;
    let mut rows = 0;
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split(',').map(str::trim).collect();
        match cols {
            None => cols = Some(tokens.len()),
            Some(c) if c != tokens.len() => {
                return Err(err(
                    ln + 1,
                    tokens.len().min(c) + 1,
                    format!("ragged row: expected {c} columns, found {}", tokens.len()),
                ));
            }
            _ => {}
        }
        for (c, tok) in tokens.iter().enumerate() {
            if *tok == "?" {
                entries.push(0.0);
                mask.push(false);
            } else {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| err(ln + 1, c + 1, format!("not a number: {tok:?}")))?;
                if !v.is_finite() {
                    return Err(err(ln + 1, c + 1, format!("non-finite value {tok:?}")));
                }
                entries.push(v);
                mask.push(true);
            }
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| err(1, 1, "empty matrix".into()))?;
    let mask = if mask.iter().all(|b| *b) { None } else { Some(mask) };
    DataMatrix::new(rows, cols, entries, mask)
}

/// Model description: rank, per-entry loss, factor regularizers and the
/// coercivity term `mu |x|^2` that is folded into the smooth part.
#[derive(Debug, Clone, PartialEq)]
pub struct GlrmSpec {
    pub rank: usize,
    pub loss: EntryLoss,
    pub row_reg: Regularizer,
    pub col_reg: Regularizer,
    pub mu: f64,
}

impl GlrmSpec {
    pub fn new(rank: usize, loss: EntryLoss) -> Self {
        GlrmSpec {
            rank,
            loss,
            row_reg: Regularizer::Zero,
            col_reg: Regularizer::Zero,
            mu: 0.0,
        }
    }
}

/// The GLRM smooth part as a [`SmoothLoss`].
#[derive(Debug, Clone)]
pub struct GlrmLoss {
    data: Arc<DataMatrix>,
    rank: usize,
    loss: EntryLoss,
    mu: f64,
}

impl GlrmLoss {
    pub fn new(data: Arc<DataMatrix>, rank: usize, loss: EntryLoss, mu: f64) -> Self {
        GlrmLoss { data, rank, loss, mu }
    }

    fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn data(&self) -> &DataMatrix {
        &self.data
    }

    pub fn rank(&self) -> usize {
        self.rank
    }
}

impl SmoothLoss for GlrmLoss {
    fn value(&self, x: &BlockVector) -> f64 {
        let (d1, d2) = (self.data.rows(), self.data.cols());
        let mut total = 0.0;
        for i in 0..d1 {
            let xi = x.block(i);
            for l in 0..d2 {
                if self.data.observed(i, l) {
                    total += self.loss.value(dot(xi, x.block(d1 + l)), self.data.get(i, l));
                }
            }
        }
        if self.mu != 0.0 {
            total += self.mu * x.norm_sq();
        }
        total
    }

    fn partial_gradient(&self, x: &BlockVector, j: usize, out: &mut [f64]) {
        let (d1, d2) = (self.data.rows(), self.data.cols());
        let own = x.block(j);
        for (o, v) in out.iter_mut().zip(own) {
            *o = 2.0 * self.mu * v;
        }
        let mut accumulate = |i: usize, l: usize, other: &[f64]| {
            if self.data.observed(i, l) {
                let g = self.loss.derivative(dot(own, other), self.data.get(i, l));
                for (o, v) in out.iter_mut().zip(other) {
                    *o += g * v;
                }
            }
        };
        if j < d1 {
            for l in 0..d2 {
                accumulate(j, l, x.block(d1 + l));
            }
        } else {
            for i in 0..d1 {
                accumulate(i, j - d1, x.block(i));
            }
        }
    }

    fn block_lipschitz(&self, x: &BlockVector, j: usize) -> f64 {
        let (d1, d2) = (self.rows(), self.data.cols());
        let mut total = 2.0 * self.mu;
        if j < d1 {
            for l in 0..d2 {
                if self.data.observed(j, l) {
                    total += norm_sq(x.block(d1 + l)) * self.loss.curvature(self.data.get(j, l));
                }
            }
        } else {
            let l = j - d1;
            for i in 0..d1 {
                if self.data.observed(i, l) {
                    total += norm_sq(x.block(i)) * self.loss.curvature(self.data.get(i, l));
                }
            }
        }
        total
    }
}

fn reg_is_coercive(r: &Regularizer) -> bool {
    match *r {
        Regularizer::IndicatorBall { .. } => true,
        Regularizer::IndicatorBox { lo, hi } => lo.is_finite() && hi.is_finite(),
        Regularizer::L1 { weight } | Regularizer::SquaredL2 { weight } => weight > 0.0,
        _ => false,
    }
}

/// Assembles the block problem for `spec` on `data`.
pub fn build_glrm(spec: &GlrmSpec, data: DataMatrix) -> Result<Problem> {
    if spec.rank == 0 {
        return Err(ApalmError::Dimension("rank must be positive".into()));
    }
    if !(spec.mu >= 0.0) || !spec.mu.is_finite() {
        return Err(ApalmError::Config(format!("mu must be nonnegative, got {}", spec.mu)));
    }
    let (d1, d2) = (data.rows(), data.cols());
    let space = BlockSpace::uniform(d1 + d2, spec.rank)?;
    let mut regs = vec![spec.row_reg; d1];
    regs.extend(std::iter::repeat_n(spec.col_reg, d2));
    let coercive = spec.mu > 0.0 || (reg_is_coercive(&spec.row_reg) && reg_is_coercive(&spec.col_reg));
    let loss = GlrmLoss::new(Arc::new(data), spec.rank, spec.loss, spec.mu);
    Ok(Problem::new(space, Arc::new(loss), regs)?.with_coercivity(coercive))
}

/// Entries i.i.d. uniform on `[0, 1/sqrt(d)]`.
pub fn initial_point(d1: usize, d2: usize, rank: usize, seed: u64) -> BlockVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hi = 1.0 / (rank as f64).sqrt();
    BlockVector::from_blocks(
        (0..d1 + d2)
            .map(|_| (0..rank).map(|_| rng.random_range(0.0..=hi)).collect())
            .collect(),
    )
}

/// Stacks row factors `x` (d1 x d) and column factors `y` (d2 x d) into one point.
pub fn factors_to_point(x: &[Vec<f64>], y: &[Vec<f64>]) -> BlockVector {
    BlockVector::from_blocks(x.iter().chain(y).cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Problem;

    fn scalar_problem() -> (Problem, BlockVector) {
        let data = DataMatrix::from_rows(&[vec![2.0]]).unwrap();
        let p = build_glrm(&GlrmSpec::new(1, EntryLoss::Quadratic), data).unwrap();
        (p, BlockVector::from_scalars(&[1.0, 1.0]))
    }

    #[test]
    fn one_by_one_quadratic() {
        let (p, x) = scalar_problem();
        assert_eq!(p.psi_value(&x).unwrap(), 0.5);
        assert_eq!(p.partial_gradient(&x, 0).unwrap(), vec![-1.0]);
    }

    #[test]
    fn lipschitz_is_sum_of_squared_norms() {
        let data = DataMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let p = build_glrm(&GlrmSpec::new(2, EntryLoss::Quadratic), data).unwrap();
        let x = BlockVector::from_blocks(vec![vec![0.3, 0.1], vec![1.0, 0.0], vec![0.0, 2.0]]);
        assert_eq!(p.coordinate_lipschitz(&x, 0).unwrap(), 5.0);
    }

    #[test]
    fn planted_factors_have_zero_loss() {
        let xf = vec![vec![1.0, 0.5], vec![0.0, 2.0], vec![1.5, -1.0]];
        let yf = vec![vec![2.0, 1.0], vec![-1.0, 0.25]];
        let rows: Vec<Vec<f64>> = xf.iter().map(|xi| yf.iter().map(|yl| dot(xi, yl)).collect()).collect();
        let p = build_glrm(&GlrmSpec::new(2, EntryLoss::Quadratic), DataMatrix::from_rows(&rows).unwrap()).unwrap();
        assert_eq!(p.psi_value(&factors_to_point(&xf, &yf)).unwrap(), 0.0);
    }

    #[test]
    fn masked_entries_do_not_touch_gradients() {
        let text = "1,?\n?,4\n";
        let a = parse_matrix(text, Path::new("m")).unwrap();
        let mut b = a.clone();
        b.set(0, 1, 123.0);
        b.set(1, 0, -7.0);
        let spec = GlrmSpec::new(2, EntryLoss::Huber { delta: 0.5 });
        let pa = build_glrm(&spec, a).unwrap();
        let pb = build_glrm(&spec, b).unwrap();
        let x = initial_point(2, 2, 2, 5);
        for j in 0..4 {
            assert_eq!(pa.partial_gradient(&x, j).unwrap(), pb.partial_gradient(&x, j).unwrap());
        }
    }

    #[test]
    fn parse_examples() {
        let m = parse_matrix("1,2\n3,4\n", Path::new("m")).unwrap();
        assert_eq!((m.rows(), m.cols(), m.observed_count()), (2, 2, 4));
        assert!(!m.has_mask());
        let m = parse_matrix("1,?\n?,4\n", Path::new("m")).unwrap();
        assert_eq!(m.observed_count(), 2);
        assert!(!m.observed(0, 1));
        let e = parse_matrix("1,2\n3\n", Path::new("m")).unwrap_err();
        assert!(matches!(e, ApalmError::Parse { line: 2, .. }), "{e}");
        let e = parse_matrix("1,2\n3,x\n", Path::new("m")).unwrap_err();
        assert!(matches!(e, ApalmError::Parse { line: 2, column: 2, .. }), "{e}");
    }

    #[test]
    fn csv_round_trip() {
        let m = parse_matrix("1.5,?\n-2,4\n", Path::new("m")).unwrap();
        assert_eq!(parse_matrix(&m.to_csv(), Path::new("m")).unwrap(), m);
    }

    #[test]
    fn loss_parsing() {
        assert_eq!("quadratic".parse::<EntryLoss>().unwrap(), EntryLoss::Quadratic);
        assert_eq!("huber:0.5".parse::<EntryLoss>().unwrap(), EntryLoss::Huber { delta: 0.5 });
        assert!("huber:-1".parse::<EntryLoss>().is_err());
        assert!("hinge".parse::<EntryLoss>().is_err());
    }

    #[test]
    fn logistic_is_stable() {
        let l = EntryLoss::Logistic;
        assert!(l.value(1000.0, -1.0).is_finite());
        assert!((l.value(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((l.derivative(0.0, 1.0) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn coercivity_metadata() {
        let data = DataMatrix::from_rows(&[vec![1.0]]).unwrap();
        let mut spec = GlrmSpec::new(1, EntryLoss::Quadratic);
        assert!(!build_glrm(&spec, data.clone()).unwrap().is_coercive());
        spec.mu = 1e-3;
        assert!(build_glrm(&spec, data.clone()).unwrap().is_coercive());
        spec.mu = 0.0;
        spec.row_reg = Regularizer::indicator_ball(1.0).unwrap();
        spec.col_reg = Regularizer::squared_l2(0.1).unwrap();
        assert!(build_glrm(&spec, data).unwrap().is_coercive());
    }
}
