use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid benchmark level {0} (expected 1, 2 or 3)")]
    InvalidLevel(u8),

    #[error("mortar ratio {ratio} is incompatible with a trace grid of {cells} cells on branch {branch}")]
    MortarRatio { branch: usize, cells: usize, ratio: usize },

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("assembly: {0}")]
    Assembly(String),

    #[error("size mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("singular factorization of {0}")]
    Singular(String),

    #[error("GMRes did not reach the target after {iterations} iterations (last residual {last:e})")]
    GmresMaxIter {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("solve budget exhausted: {used} units used, {requested} more requested, budget {budget}")]
    BudgetExceeded { used: u64, requested: u64, budget: u64 },

    #[error("outer iteration did not converge in {iterations} iterations (last update {last_update:e})")]
    OuterNotConverged { iterations: usize, last_update: f64 },

    #[error("Newton residual grew for {0} consecutive steps; warm-start with a few fixed-point iterations")]
    NewtonDiverged(usize),

    #[error("the Newton linearization is only available for the standard Forchheimer law (zeta = 0)")]
    NewtonRequiresStandardLaw,

    #[error("stale multiscale flux basis: {0}")]
    StaleBasis(String),

    #[error("corrupt basis file {path}: {reason}")]
    CorruptBasis { path: PathBuf, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error is the solve-budget marker rather than a failure.
    pub fn is_budget(&self) -> bool {
        matches!(self, Error::BudgetExceeded { .. })
    }
}
