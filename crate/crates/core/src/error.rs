use thiserror::Error;

/// Errors raised by detection, training and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (dimensions, ranges).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A matrix that must be inverted is (numerically) singular.
    #[error("singular matrix: smallest pivot {pivot:e}")]
    Singular { pivot: f64 },

    /// An iterative detector left its stability envelope.
    #[error("diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    /// Exhaustive search would exceed the configured candidate budget.
    #[error("search space {order}^{n_t} exceeds the budget of {budget} candidates")]
    Capacity { order: usize, n_t: usize, budget: u64 },

    /// A non-finite value appeared while running a learned model.
    #[error("non-finite value in layer {layer}{}", .iteration.map(|i| format!(" at training iteration {i}")).unwrap_or_default())]
    Numerical {
        layer: usize,
        iteration: Option<usize>,
    },

    /// Malformed dataset or parameter file.
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    /// A requested value lies outside the range covered by the data.
    #[error("out of range: {0}")]
    Range(String),

    /// Statistic undefined for the given sample.
    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
