use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("parameter `{name}` has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint missing parameter `{0}`")]
    MissingParam(String),
    #[error("not a checkpoint: magic `{0}` (expected `STHSEP1`)")]
    BadMagic(String),
    #[error("checkpoint io: {path}: {source}")]
    CheckpointIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint parse: {0}")]
    CheckpointParse(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Core(#[from] sthsep_core::CoreError),
    #[error(transparent)]
    Graph(#[from] sthsep_graph::GraphError),
    #[error(transparent)]
    Data(#[from] sthsep_data::DataError),
}

pub type ModelResult<T> = Result<T, ModelError>;
