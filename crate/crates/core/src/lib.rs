pub mod block;
pub mod config;
pub mod desk;
pub mod error;
pub mod executor;
pub mod experiment;
pub mod glrm;
pub mod history;
pub mod monitor;
pub mod problem;
pub mod prox;
pub mod solver;
pub mod trace;

pub use block::{BlockSpace, BlockVector};
pub use config::ExperimentConfig;
pub use error::{ApalmError, Result};
pub use executor::{Executor, ParallelConfig, ReplayScript, Throttle};
pub use problem::{GlobalLipschitz, Problem, SmoothLoss};
pub use prox::Regularizer;
pub use solver::{run, SolverConfig, Variant};
pub use trace::{Trace, TraceRecord};
