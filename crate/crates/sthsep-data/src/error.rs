use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },
    #[error("failed to read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("invalid window spec: {0}")]
    Window(String),
    #[error("split `{split}` has {len} steps but needs at least {need}")]
    SplitTooShort {
        split: &'static str,
        len: usize,
        need: usize,
    },
    #[error(transparent)]
    Core(#[from] sthsep_core::CoreError),
}

pub type DataResult<T> = Result<T, DataError>;
