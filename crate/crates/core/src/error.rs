use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// A generator could not satisfy one of its geometric constraints.
    #[error("infeasible construction: {0}")]
    Construction(String),
    /// A value outside the domain of a mathematical operation, e.g. a zero-norm embedding.
    #[error("domain error: {0}")]
    Domain(String),
    /// Caller-side precondition violated (mismatched graphs, empty prompts, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("config error: {0}")]
    Config(String),
    /// Loss or parameters became non-finite; `epoch` is 1-based.
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
