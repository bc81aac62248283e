use thiserror::Error;

use crate::riccati::IterationTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("non-stabilizing closed loop: generalized Lyapunov operator is singular (condition number {cond:.3e})")]
    NonStabilizingClosedLoop { cond: f64 },

    #[error("initial gain is not a mean-square stabilizer")]
    NotStabilizer,

    #[error("closed-loop matrix is not Hurwitz at iteration {iteration}")]
    NotHurwitz { iteration: usize },

    #[error("no convergence after {iterations} iterations")]
    NoConvergence {
        iterations: usize,
        trace: Box<IterationTrace>,
    },

    #[error("rank condition violated at iteration {iteration}: rank {rank} < {required}")]
    RankDeficient {
        iteration: usize,
        rank: usize,
        required: usize,
    },

    #[error("rank condition violated: {0}")]
    RankCondition(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("trajectory diverged at t = {t} (path {path_id})")]
    Diverged { t: f64, path_id: usize },

    #[error("window outside simulation grid: {0}")]
    WindowOutsideGrid(String),

    #[error("identification route unavailable; use Monte Carlo route ({0})")]
    IdentificationUnavailable(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by bad input rather than numerics.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Dimension(_) | Error::Invalid(_) | Error::Config(_) | Error::NotStabilizer => {
                true
            }
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}
