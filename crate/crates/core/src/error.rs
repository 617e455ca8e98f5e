use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Layer or operator hyper-parameters do not describe a valid computation.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The call is not meaningful in the current state (empty data, non-scalar loss, ...).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("length error in {what}: expected {expected} bytes, found {actual}")]
    Length {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    /// No sample of the evaluated set was classified correctly.
    #[error("correct subset is empty: nothing to attack")]
    EmptySubset,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
