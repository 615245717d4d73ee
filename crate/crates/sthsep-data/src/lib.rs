//! Dataset ingestion and preparation: CSV parsing with line-accurate errors,
//! chronological train/val/test splitting, train-statistics z-score
//! normalization, and sliding lookback/horizon windows.

pub mod dataset;
pub mod error;
pub mod normalize;
pub mod window;

pub use dataset::{load_dataset, GeoSource, SpatioTemporalDataset};
pub use error::{DataError, DataResult};
pub use normalize::{zscore_normalize, NormStats};
pub use window::{make_windows, split_dataset, Window, WindowSpec};
