use std::fmt;

/// Unified error type for the whole crate.
///
/// Every variant maps to a stable category name so callers (the CLI in
/// particular) can emit machine-parseable one-line failures.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector with norm below the normalization threshold.
    ZeroVector,
    /// A computation produced NaN or infinity where finite values are required.
    NonFinite(String),
    /// An input fell outside the mathematical domain of an operation.
    Domain(String),
    /// A batch too small or malformed for the requested loss.
    DegenerateBatch(String),
    /// A configuration value (or combination) that cannot be used.
    InvalidConfig(String),
    /// A sampling request that cannot be satisfied by the available data.
    Infeasible(String),
    /// A text file that does not conform to its format.
    Parse {
        path: String,
        line: usize,
        byte_offset: u64,
        message: String,
    },
    /// A trial referenced an utterance id with no known embedding.
    MissingId(String),
    /// Trial labels with one class absent; EER/minDCF are undefined.
    DegenerateLabels(String),
    /// A cohort score set with (near-)zero spread; normalization undefined.
    ZeroVariance(String),
    /// A runtime invariant (e.g. unit-norm drift) was violated.
    InvariantViolation(String),
    /// Training produced a non-finite loss.
    Diverged {
        epoch: usize,
        step: usize,
        message: String,
    },
    /// An I/O failure, with the offending path.
    Io(String),
}

impl Error {
    /// Stable category tag used in CLI error lines and reports.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ZeroVector => "ZeroVector",
            Error::NonFinite(_) => "NonFinite",
            Error::Domain(_) => "DomainError",
            Error::DegenerateBatch(_) => "DegenerateBatch",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Infeasible(_) => "Infeasible",
            Error::Parse { .. } => "ParseError",
            Error::MissingId(_) => "MissingId",
            Error::DegenerateLabels(_) => "DegenerateLabels",
            Error::ZeroVariance(_) => "ZeroVariance",
            Error::InvariantViolation(_) => "InvariantViolation",
            Error::Diverged { .. } => "Diverged",
            Error::Io(_) => "IoError",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ZeroVector => write!(f, "vector norm below 1e-12; cannot normalize"),
            Error::NonFinite(m) => write!(f, "non-finite value: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::DegenerateBatch(m) => write!(f, "degenerate batch: {m}"),
            Error::InvalidConfig(m) => write!(f, "invalid config: {m}"),
            Error::Infeasible(m) => write!(f, "infeasible request: {m}"),
            Error::Parse {
                path,
                line,
                byte_offset,
                message,
            } => write!(f, "{path}:{line} (byte {byte_offset}): {message}"),
            Error::MissingId(id) => write!(f, "unknown utterance id: {id}"),
            Error::DegenerateLabels(m) => write!(f, "degenerate trial labels: {m}"),
            Error::ZeroVariance(m) => write!(f, "zero cohort variance: {m}"),
            Error::InvariantViolation(m) => write!(f, "invariant violation: {m}"),
            Error::Diverged {
                epoch,
                step,
                message,
            } => write!(
                f,
                "training diverged at epoch {epoch}, step {step}: {message}"
            ),
            Error::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
