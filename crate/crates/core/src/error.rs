use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// The variants fall into two families that the CLI maps to exit codes:
/// usage errors (bad shapes, bad parameters) and data errors (non-finite
/// input, degenerate factors, ill-posed solves, corrupt files).
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate column {column}: {reason}")]
    DegenerateColumn { column: usize, reason: String },

    #[error("ill-posed least squares: effective rank {rank} < {required}")]
    IllPosed { rank: usize, required: usize },

    #[error("value {0} is outside the binary16 range")]
    Range(f64),

    #[error("only {survived} replicas survived, at least {required} required")]
    InsufficientReplicas { survived: usize, required: usize },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Tags an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by the caller's arguments rather than the data.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Usage(_) => true,
            Error::Stage { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
