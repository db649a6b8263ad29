use thiserror::Error;

/// Unified error type for the whole crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Structurally invalid input: wrong lengths, non-finite entries,
    /// out-of-range arguments.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A probability vector that is negative somewhere or does not sum to 1.
    #[error("invalid distribution: {0}")]
    Distribution(String),

    /// The reference vector of a relative error has zero norm, so the metric
    /// is undefined.
    #[error("relative error undefined: reference vector has zero norm")]
    DegenerateReference,

    /// Operation only defined for a specific head dimension.
    #[error("unsupported head dimension {actual}, operation requires d = {required}")]
    UnsupportedDimension { required: usize, actual: usize },

    /// An LSH index cannot be built over zero keys.
    #[error("cannot build an LSH index over zero keys")]
    EmptyIndex,

    /// All keys are zero, so the norm-equalizing transform is undefined.
    #[error("degenerate keys: {0}")]
    DegenerateKeys(String),

    /// An estimator was left with no tokens at all to attend over.
    #[error("degenerate output: no sampled and no static tokens")]
    DegenerateOutput,

    /// Malformed binary file. `offset` is the byte position at which the
    /// problem was detected.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Malformed experiment configuration; names the offending field.
    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
