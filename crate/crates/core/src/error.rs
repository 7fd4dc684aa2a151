use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("equilibrium solver did not converge after {iterations} iterations (gradient norm {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("ion chain is unstable: transverse mode {mode} has eigenvalue {eigenvalue:e} (zigzag transition)")]
    ChainUnstable { mode: usize, eigenvalue: f64 },

    #[error("beatnote detuning is {offset_hz:.1} Hz from transverse mode {mode}, inside the {guard_hz:.1} Hz guard band")]
    Resonance { mode: usize, offset_hz: f64, guard_hz: f64 },

    #[error("cannot fit power law: coupling J[{i}][{j}] = {value:e} is not positive")]
    FitDomain { i: usize, j: usize, value: f64 },

    #[error("cannot rescale an all-zero coupling matrix")]
    ZeroScale,

    #[error("{what} supports at most {cap} spins, got {n}")]
    Capacity { what: &'static str, n: usize, cap: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("eigensolver did not converge (residual {residual:e})")]
    Numeric { residual: f64 },

    #[error("time step underflow at t = {time:e} s (step {step:e} s)")]
    Stiffness { time: f64, step: f64 },

    #[error("initial state requires a nonzero field")]
    ZeroField,

    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
