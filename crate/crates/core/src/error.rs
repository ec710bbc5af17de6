use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no segment set has at least {min_length} mutual timestamps")]
    EmptyCohort { min_length: usize },
    #[error("stream `{0}` is constant over its observed entries")]
    DegenerateStream(String),
    #[error("no segment has an observed entry; nothing to train on")]
    Untrainable,
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
