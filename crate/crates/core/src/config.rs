//! Experiment configuration: a sectioned key-value file (TOML syntax).
//!
//! ```toml
//! [problem]
//! kind = "glrm"            # or nmf_desk, sparse_pca_desk, quad_cluster_desk
//! data = "data/small.csv"  # glrm only, relative to this file
//! rank = 2
//! loss = "quadratic"       # huber:<delta>, logistic
//! row_reg = "indicator_nonneg"
//! col_reg = "l1:0.1"
//! mu = 1e-3
//! init_seed = 1
//! M = "auto"               # or a number
//!
//! [solver]
//! variant = "deterministic"
//! c = 0.9
//! tau = 0
//! K = 10
//! max_iters = 10000
//! tol_residual = 1e-6
//! seed = 0
//! order = "cyclic"
//! rho = 3                  # optional, replaces the rho_tau computed from the schedule
//!
//! [solver.linesearch]      # optional, replay only
//! C = 1e-6
//!
//! [executor.replay]        # exactly one executor section
//! delays = "zero"          # max, random; or script = "path"
//!
//! [output]
//! trace = "out/run.csv"
//! summary = "out/run.summary"
//! ```

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::desk::DeskProblem;
use crate::error::{ApalmError, Result};
use crate::executor::{Executor, ParallelConfig, ReplayScript, Throttle};
use crate::glrm::{build_glrm, initial_point, load_matrix, EntryLoss, GlrmSpec};
use crate::history::{DelayPattern, Schedule};
use crate::problem::{GlobalLipschitz, Problem};
use crate::prox::Regularizer;
use crate::solver::{IndexOrder, LineSearch, SolverConfig, Variant};
use crate::block::BlockVector;

/// Overrides `executor.parallel.workers`.
pub const WORKERS_ENV: &str = "APALM_WORKERS";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: RawProblem,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    executor: RawExecutor,
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawM {
    Value(f64),
    Text(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    kind: String,
    data: Option<String>,
    rank: Option<usize>,
    loss: Option<String>,
    row_reg: Option<String>,
    col_reg: Option<String>,
    mu: Option<f64>,
    init_seed: Option<u64>,
    #[serde(rename = "M")]
    m: Option<RawM>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    variant: Option<String>,
    c: Option<f64>,
    tau: Option<usize>,
    #[serde(rename = "K")]
    k_window: Option<usize>,
    max_iters: Option<u64>,
    tol_residual: Option<f64>,
    seed: Option<u64>,
    order: Option<String>,
    rho: Option<usize>,
    linesearch: Option<RawLineSearch>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLineSearch {
    #[serde(rename = "C")]
    c_accept: Option<f64>,
    shrink: Option<f64>,
    grow: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExecutor {
    replay: Option<RawReplay>,
    parallel: Option<RawParallel>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReplay {
    script: Option<String>,
    delays: Option<String>,
    cyclic: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParallel {
    workers: usize,
    tau_max: Option<usize>,
    throttle: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    trace: String,
    summary: String,
    schedule: Option<String>,
    residual_stride: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSource {
    Desk(DeskProblem),
    Glrm { spec: GlrmSpec, data: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    Replay {
        script: Option<PathBuf>,
        delays: DelayPattern,
        cyclic: bool,
    },
    Parallel(ParallelConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub trace: PathBuf,
    pub summary: PathBuf,
    /// Realized schedule of a parallel run; defaults to `<trace>.schedule`.
    pub schedule: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: PathBuf,
    pub problem: ProblemSource,
    pub init_seed: u64,
    pub global_m: GlobalLipschitz,
    pub solver: SolverConfig,
    pub backend: Backend,
    pub output: OutputPaths,
}

fn line_col(text: &str, span: Option<Range<usize>>) -> (usize, usize) {
    let Some(span) = span else { return (0, 0) };
    let upto = &text[..span.start.min(text.len())];
    let line = upto.matches('\n').count() + 1;
    let col = upto.len() - upto.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
    (line, col)
}

fn parse_named<T: std::str::FromStr<Err = ApalmError>>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>().map_err(|e| match e {
        ApalmError::Config(msg) | ApalmError::Regularizer(msg) => ApalmError::Config(format!("{key}: {msg}")),
        other => other,
    })
}

fn delay_pattern(s: &str, seed: u64) -> Result<DelayPattern> {
    match s.trim() {
        "zero" => Ok(DelayPattern::Zero),
        "max" => Ok(DelayPattern::Max),
        "random" => Ok(DelayPattern::Random { seed }),
        other => Err(ApalmError::Config(format!(
            "executor.replay.delays: unknown pattern {other:?} (expected zero, max or random)"
        ))),
    }
}

fn must_exist(path: &Path) -> Result<()> {
    std::fs::metadata(path).map(|_| ()).map_err(|e| ApalmError::io(path, e))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ApalmError::io(path, e))?;
        let cfg = Self::parse(&text, path)?;
        cfg.check_files()?;
        Ok(cfg)
    }

    /// Parses and validates the text; relative paths resolve against `origin`'s directory.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = line_col(text, e.span());
            ApalmError::Parse {
                path: origin.to_path_buf(),
                line,
                column,
                message: e.message().trim().to_string(),
            }
        })?;
        let base = origin.parent().map(Path::to_path_buf).unwrap_or_default();
        let resolve = |p: &str| -> PathBuf {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };

        let rp = raw.problem;
        let problem = if rp.kind.trim() == "glrm" {
            let data = rp
                .data
                .as_deref()
                .ok_or_else(|| ApalmError::Config("problem.data is required for kind = \"glrm\"".into()))?;
            let rank = rp
                .rank
                .ok_or_else(|| ApalmError::Config("problem.rank is required for kind = \"glrm\"".into()))?;
            if rank == 0 {
                return Err(ApalmError::Config("problem.rank must be at least 1".into()));
            }
            let mu = rp.mu.unwrap_or(0.0);
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(ApalmError::Config(format!("problem.mu = {mu} must be finite and nonnegative")));
            }
            let reg = |key: &str, v: &Option<String>| -> Result<Regularizer> {
                match v {
                    Some(s) => parse_named::<Regularizer>(key, s)?
                        .validated()
                        .map_err(|e| ApalmError::Config(format!("{key}: {e}"))),
                    None => Ok(Regularizer::Zero),
                }
            };
            ProblemSource::Glrm {
                spec: GlrmSpec {
                    rank,
                    loss: parse_named::<EntryLoss>("problem.loss", rp.loss.as_deref().unwrap_or("quadratic"))?,
                    row_reg: reg("problem.row_reg", &rp.row_reg)?,
                    col_reg: reg("problem.col_reg", &rp.col_reg)?,
                    mu,
                },
                data: resolve(data),
            }
        } else {
            let desk = parse_named::<DeskProblem>("problem.kind", &rp.kind)
                .map_err(|_| ApalmError::Config(format!(
                    "problem.kind: unknown kind {:?} (expected glrm, nmf_desk, sparse_pca_desk or quad_cluster_desk)",
                    rp.kind
                )))?;
            let extra = [
                ("data", rp.data.is_some()),
                ("rank", rp.rank.is_some()),
                ("loss", rp.loss.is_some()),
                ("row_reg", rp.row_reg.is_some()),
                ("col_reg", rp.col_reg.is_some()),
                ("mu", rp.mu.is_some()),
            ];
            if let Some((k, _)) = extra.iter().find(|(_, set)| *set) {
                return Err(ApalmError::Config(format!(
                    "problem.{k} cannot be set for the bundled problem {}",
                    desk.name()
                )));
            }
            ProblemSource::Desk(desk)
        };
        let global_m = match rp.m {
            None => GlobalLipschitz::Auto,
            Some(RawM::Text(s)) if s.trim() == "auto" => GlobalLipschitz::Auto,
            Some(RawM::Text(s)) => {
                return Err(ApalmError::Config(format!("problem.M: expected \"auto\" or a number, got {s:?}")))
            }
            Some(RawM::Value(v)) if v > 0.0 && v.is_finite() => GlobalLipschitz::Fixed(v),
            Some(RawM::Value(v)) => return Err(ApalmError::Config(format!("problem.M = {v} must be positive"))),
        };

        let rs = raw.solver;
        let defaults = SolverConfig::default();
        let linesearch = rs.linesearch.map(|ls| {
            let d = LineSearch::default();
            LineSearch {
                c_accept: ls.c_accept.unwrap_or(d.c_accept),
                shrink: ls.shrink.unwrap_or(d.shrink),
                grow: ls.grow.unwrap_or(d.grow),
            }
        });
        let solver = SolverConfig {
            variant: match &rs.variant {
                Some(v) => parse_named::<Variant>("solver.variant", v)?,
                None => defaults.variant,
            },
            c: rs.c.unwrap_or(defaults.c),
            tau: rs.tau.unwrap_or(defaults.tau),
            k_window: rs.k_window,
            max_iters: rs.max_iters.unwrap_or(defaults.max_iters),
            tol_residual: rs.tol_residual.unwrap_or(defaults.tol_residual),
            seed: rs.seed.unwrap_or(defaults.seed),
            linesearch,
            order: match &rs.order {
                Some(o) => parse_named::<IndexOrder>("solver.order", o)?,
                None => defaults.order,
            },
            residual_stride: raw.output.residual_stride.unwrap_or(defaults.residual_stride),
            rho_override: rs.rho,
            track_expected_decrease: false,
        };

        let backend = match (raw.executor.replay, raw.executor.parallel) {
            (Some(_), Some(_)) => {
                return Err(ApalmError::Config(
                    "select exactly one executor: both [executor.replay] and [executor.parallel] are present".into(),
                ))
            }
            (None, None) => {
                return Err(ApalmError::Config(
                    "select an executor with an [executor.replay] or [executor.parallel] section".into(),
                ))
            }
            (Some(r), None) => {
                if r.script.is_some() && r.delays.is_some() {
                    return Err(ApalmError::Config(
                        "executor.replay: give either script or delays, not both".into(),
                    ));
                }
                Backend::Replay {
                    script: r.script.as_deref().map(resolve),
                    delays: delay_pattern(r.delays.as_deref().unwrap_or("zero"), solver.seed)?,
                    cyclic: r.cyclic.unwrap_or(false),
                }
            }
            (None, Some(p)) => {
                let pcfg = ParallelConfig {
                    workers: p.workers,
                    tau_max: p.tau_max,
                    throttle: match &p.throttle {
                        Some(t) => parse_named::<Throttle>("executor.parallel.throttle", t)?,
                        None => Throttle::Block,
                    },
                };
                pcfg.validate()?;
                Backend::Parallel(pcfg)
            }
        };

        let cfg = ExperimentConfig {
            source: origin.to_path_buf(),
            problem,
            init_seed: rp.init_seed.unwrap_or(1),
            global_m,
            solver,
            backend,
            output: OutputPaths {
                trace: resolve(&raw.output.trace),
                summary: resolve(&raw.output.summary),
                schedule: raw.output.schedule.as_deref().map(resolve),
            },
        };
        cfg.validate_solver()?;
        Ok(cfg)
    }

    fn validate_solver(&self) -> Result<()> {
        // A GLRM's block count depends on the data, so only shape-free checks run here.
        let m = match &self.problem {
            ProblemSource::Desk(d) => d.problem().num_blocks(),
            ProblemSource::Glrm { .. } => 0,
        };
        self.solver.validate(m)?;
        if let Backend::Parallel(_) = self.backend {
            if self.solver.linesearch.is_some() {
                return Err(ApalmError::Config(
                    "solver.linesearch is only supported by the replay executor".into(),
                ));
            }
        }
        Ok(())
    }

    /// Fails with an IO error naming the first referenced input that is missing.
    pub fn check_files(&self) -> Result<()> {
        if let ProblemSource::Glrm { data, .. } = &self.problem {
            must_exist(data)?;
        }
        if let Backend::Replay { script: Some(s), .. } = &self.backend {
            must_exist(s)?;
        }
        Ok(())
    }

    /// Applies the worker-count override from the environment, if set.
    pub fn apply_env(&mut self) -> Result<()> {
        match std::env::var(WORKERS_ENV) {
            Ok(v) => self.override_workers(&v),
            Err(_) => Ok(()),
        }
    }

    pub fn override_workers(&mut self, value: &str) -> Result<()> {
        let w: usize = value
            .trim()
            .parse()
            .ok()
            .filter(|&w| w > 0)
            .ok_or_else(|| ApalmError::Config(format!("{WORKERS_ENV} = {value:?} is not a positive integer")))?;
        if let Backend::Parallel(p) = &mut self.backend {
            p.workers = w;
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<(Problem, BlockVector)> {
        let (problem, x0) = match &self.problem {
            ProblemSource::Desk(d) => (d.problem(), d.initial_point(self.init_seed)),
            ProblemSource::Glrm { spec, data } => {
                let data = load_matrix(data)?;
                let x0 = initial_point(data.rows(), data.cols(), spec.rank, self.init_seed);
                (build_glrm(spec, data)?, x0)
            }
        };
        Ok((problem.with_global_lipschitz(self.global_m)?, x0))
    }

    /// The replay script this config describes, for a problem with `m` blocks.
    pub fn replay_script(&self, m: usize) -> Result<Option<ReplayScript>> {
        match &self.backend {
            Backend::Parallel(_) => Ok(None),
            Backend::Replay { script: Some(path), cyclic, .. } => {
                let text = std::fs::read_to_string(path).map_err(|e| ApalmError::io(path, e))?;
                let mut s = ReplayScript::new(Schedule::parse(&text, path)?);
                s.cyclic = *cyclic;
                Ok(Some(s))
            }
            Backend::Replay { script: None, delays, .. } => Ok(Some(ReplayScript::generate(
                &self.solver,
                m,
                self.solver.max_iters,
                *delays,
            ))),
        }
    }

    pub fn executor(&self, m: usize) -> Result<Executor> {
        match &self.backend {
            Backend::Parallel(p) => Ok(Executor::Parallel(*p)),
            Backend::Replay { .. } => Ok(Executor::Replay(self.replay_script(m)?.expect("replay backend"))),
        }
    }

    pub fn schedule_path(&self) -> PathBuf {
        self.output.schedule.clone().unwrap_or_else(|| {
            let mut s = self.output.trace.clone().into_os_string();
            s.push(".schedule");
            PathBuf::from(s)
        })
    }
}
