//! The forecasting model: a spatial branch propagating the lookback window
//! over learned and physical graph supports, a temporal branch running a
//! small causal transformer over the node-mean trend, and a learned gate
//! blending the two horizon predictions.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod fusion;
pub mod model;
pub mod spatial;
pub mod temporal;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use config::{
    GateSetting, GraphConfig, Loss, MixPropConfig, ModelConfig, PatchSpec, RebuildSchedule,
    SpatialFusionConfig, TrainConfig, TransformerConfig, WindowConfig,
};
pub use error::{ModelError, ModelResult};
pub use fusion::{gated_fusion, GateBehavior};
pub use model::{GraphBundle, Model};
pub use spatial::{
    adaptive_gcn, hypergraph_conv, mixprop, s_block, spatial_fuse, t_block, HgcnNames,
    MixPropGate,
};
pub use temporal::{
    avg_pool_nodes, embed_inputs, patch_count, patchify, project_trend, prompt_stats,
    transformer_layer, PromptStats, TemporalNames,
};
pub use train::{evaluate, train, EpochStats, TrainOutcome};
