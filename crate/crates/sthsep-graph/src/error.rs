use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("no pairwise distances available; supply node coordinates or an edge list")]
    MissingDistances,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("hyperedge order {order_k} exceeds node count {n}")]
    OrderTooLarge { order_k: usize, n: usize },
    #[error(transparent)]
    Core(#[from] sthsep_core::CoreError),
}

pub type GraphResult<T> = Result<T, GraphError>;
