use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A failure inside the EM loop, tagged with the 1-based iteration.
    #[error("prior fit failed at iteration {iteration}: {source}")]
    Fit {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    /// A failure while evaluating one left-out slice.
    #[error("fold for slice {slice_id:?} failed: {source}")]
    Fold {
        slice_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },

    #[error("refused: {0}")]
    Refused(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn parse(line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    /// Short machine-readable code used in CLI and HTTP error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Numerical(_) => "numerical",
            Error::Fit { .. } => "fit",
            Error::Fold { source, .. } => source.code(),
            Error::Parse { .. } => "parse",
            Error::Refused(_) => "refused",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
