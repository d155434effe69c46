use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure category, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments or configuration.
    Config,
    /// Unreadable or invalid input data.
    Data,
    /// A model could not be fitted or a derived quantity is undefined.
    Fit,
}

/// Errors raised by this crate. Cause numbers in messages are one-based labels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {msg}")]
    MalformedRow { row: u64, msg: String },
    #[error("data file contains no records")]
    EmptyData,
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("invalid model term `{0}`")]
    InvalidTerm(String),
    #[error("log(t) term requires t > 0, got {0}")]
    LogOfNonPositive(f64),
    #[error("time-dependent term evaluated on a censored record")]
    TimeTermOnCensored,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no complete cases observed for cause {cause}")]
    NoCompleteCases { cause: usize },
    #[error("rank-deficient design: {0}")]
    RankDeficient(String),
    #[error("separation detected in cause-probability model (|gamma| > {bound})")]
    Separation { bound: f64 },
    #[error("{what} did not converge within {iterations} iterations")]
    NotConverged { what: String, iterations: usize },
    #[error("cause {cause} has no failures (zero total weight)")]
    DegenerateCause { cause: usize },
    #[error("monotone likelihood for cause {cause}: |beta| exceeded {bound}")]
    Divergence { cause: usize, bound: f64 },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("empty risk set at time {0}")]
    EmptyRiskSet(f64),
    #[error("empty band domain")]
    EmptyBandDomain,
    #[error("band undefined: {0}")]
    BandUndefined(String),
    #[error("study aborted: {failed} of {total} replicates failed")]
    StudyAborted { failed: usize, total: usize },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            InvalidArgument(_) | InvalidTerm(_) => ErrorKind::Config,
            Io(_) | Csv(_) | MalformedRow { .. } | EmptyData | InvalidData(_) | UnknownColumn(_)
            | LogOfNonPositive(_) | TimeTermOnCensored | DimensionMismatch { .. }
            | EmptyRiskSet(_) => ErrorKind::Data,
            NoCompleteCases { .. } | RankDeficient(_) | Separation { .. } | NotConverged { .. }
            | DegenerateCause { .. } | Divergence { .. } | Singular(_) | EmptyBandDomain
            | BandUndefined(_) | StudyAborted { .. } => ErrorKind::Fit,
        }
    }
}
