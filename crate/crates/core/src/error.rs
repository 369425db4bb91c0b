use thiserror::Error;

/// Errors raised by the optimizer, diagnostics and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or arguments that violate an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// A gradient, product or iterate became NaN or infinite.
    #[error("numerical error in {context}{}", index.map(|i| format!(" at index {i}")).unwrap_or_default())]
    Numerical {
        context: String,
        index: Option<usize>,
    },

    /// The game cannot provide what the caller asked for (e.g. closed-form mixed blocks).
    #[error("capability error: {0}")]
    Capability(String),

    /// A secant pair whose joint displacement is below the storage floor.
    #[error("degenerate step: |s_w|^2 = {0:e} is below the floor")]
    DegenerateStep(f64),

    /// Invalid experiment configuration or batch schedule.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numerical(context: impl Into<String>, index: Option<usize>) -> Self {
        Error::Numerical {
            context: context.into(),
            index,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
