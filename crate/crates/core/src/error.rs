//! Crate-wide error type with a fixed exit-code taxonomy for the CLI.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes, naming both operands.
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Signal/coefficient length violates a transform precondition.
    #[error("length error: {0}")]
    Length(String),

    /// A caller-side contract was violated.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Invalid configuration; collects every violation found.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    /// Dataset-level problem (unusable values, zero variance, ...).
    #[error("data error: {0}")]
    Data(String),

    /// CSV or checkpoint parse failure with location.
    #[error("parse error: {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Numerical abort: NaN gradients, divergence.
    #[error("numerical error: {0}")]
    Numeric(String),

    /// Invalid command usage (unknown variant, bad flag combination).
    #[error("usage error: {0}")]
    Usage(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    /// Exit-code taxonomy: 1 config, 2 data, 3 numerical abort.
    /// (Exit 4 is reserved for selftest suite failures and produced by the CLI.)
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Precondition(_) => 1,
            Error::Shape { .. } | Error::Length(_) => 1,
            Error::Data(_) | Error::Parse { .. } | Error::Io { .. } => 2,
            Error::Numeric(_) => 3,
        }
    }

    /// One-line machine-parsable form: `error[kind]: message`.
    pub fn one_line(&self) -> String {
        let kind = match self {
            Error::Shape { .. } => "shape",
            Error::Length(_) => "length",
            Error::Precondition(_) => "precondition",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Numeric(_) => "numeric",
            Error::Usage(_) => "usage",
        };
        format!("error[{kind}]: {self}")
    }
}
