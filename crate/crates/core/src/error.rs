use thiserror::Error;

/// Errors raised anywhere in the library. Operation names are written as
/// `module::operation` so a failure can be traced from the message alone.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension error: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("{op}: index {index} out of range (bound {bound})")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("{op}: contract violation: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("{op}: format error at offset {offset}: {detail}")]
    Format {
        op: &'static str,
        offset: u64,
        detail: String,
    },

    #[error("trainer::train: non-finite value at step {step}: {detail}")]
    Numerical { step: u64, detail: String },

    #[error("{op}: i/o error on {path}: {source}")]
    Io {
        op: &'static str,
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(
        op: &'static str,
        path: &std::path::Path,
    ) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.display().to_string();
        move |source| Error::Io { op, path, source }
    }

    /// Process exit status for this error: 2 for numerical aborts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
