use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("cyclic mediators")]
    CyclicMediators,
    #[error("acyclicity overflow")]
    AcyclicityOverflow,
    #[error("index {index} out of range for {what} (len {len})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("rank-deficient design for response {0}")]
    RankDeficient(String),
    #[error("discovery did not converge (h1 = {h1:e})")]
    NotConverged { h1: f64 },
    #[error("too many failed bootstrap replicates: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },
    #[error("scenario {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::CyclicMediators => "cyclic_mediators",
            Error::AcyclicityOverflow => "acyclicity_overflow",
            Error::OutOfRange { .. } => "out_of_range",
            Error::Config(_) => "config",
            Error::NonFinite(_) => "non_finite",
            Error::RankDeficient(_) => "rank_deficient",
            Error::NotConverged { .. } => "not_converged",
            Error::TooManyFailures { .. } => "too_many_failures",
            Error::Seed { .. } => "seed",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
