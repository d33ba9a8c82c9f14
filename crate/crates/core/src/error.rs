use std::path::PathBuf;

/// Errors raised anywhere in the library.
///
/// The variants map onto the CLI exit codes: `Numeric` is a numeric failure,
/// everything that concerns files or datasets is a data error, and the rest
/// are contract violations by the caller.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch on axis `{axis}`: {detail}")]
    Dimension { axis: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in `{op}`: {detail}")]
    Numeric { op: String, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(axis: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            axis,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by inputs on disk (missing files, bad formats).
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format(_) | Error::Version { .. } | Error::Data(_) | Error::Io { .. }
        )
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
