use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: invalid {field}: {reason}")]
    Parse {
        line: u64,
        field: &'static str,
        reason: String,
    },

    #[error("line {line}: unknown label token `{token}` (manifest knows: {known})")]
    UnknownLabel {
        line: u64,
        token: String,
        known: String,
    },

    #[error("line {line}: timestamp {timestamp} is {behind:.6} s earlier than a previous frame (slack {slack} s)")]
    Unordered {
        line: u64,
        timestamp: f64,
        behind: f64,
        slack: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{distinct} distinct CAN IDs do not fit a {bit_width}-bit code (one code is reserved); bit width {needed} is needed")]
    TooManyIds {
        distinct: usize,
        bit_width: u8,
        needed: u32,
    },

    #[error("negative interval {delta} s for CAN ID {can_id:#x}; the stream is out of order")]
    NegativeInterval { can_id: u32, delta: f64 },

    #[error("no inter-arrival intervals computable: every CAN ID occurs at most once")]
    NoIntervals,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("loss became NaN at epoch {epoch}, batch {batch} (learning rate {lr})")]
    Diverged { epoch: usize, batch: usize, lr: f64 },

    #[error("class {class} has {count} samples, too few for a {splits}-way split")]
    ClassTooSmall {
        class: u16,
        count: usize,
        splits: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("featurizer config hash {found} does not match the model's {expected}")]
    FeaturizerMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: u64, field: &'static str, reason: impl Into<String>) -> Self {
        Error::Parse {
            line,
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_)
            | Error::TooManyIds { .. }
            | Error::FeaturizerMismatch { .. }
            | Error::Shape(_) => ErrorCategory::Config,
            Error::Parse { .. }
            | Error::UnknownLabel { .. }
            | Error::Unordered { .. }
            | Error::NegativeInterval { .. }
            | Error::NoIntervals
            | Error::ClassTooSmall { .. }
            | Error::Empty(_)
            | Error::Format { .. }
            | Error::Io(_) => ErrorCategory::Data,
            Error::NonFinite(_) | Error::Diverged { .. } => ErrorCategory::Internal,
        }
    }
}
