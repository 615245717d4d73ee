//! Model configuration. Every field has a default tuned for the small
//! synthetic benchmarks; `validate` enforces cross-field consistency before
//! any parameter is drawn.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, ModelResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            lookback: 48,
            horizon: 48,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RebuildSchedule {
    Epoch,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    /// Embedding width d of the three node tables.
    pub embed_dim: usize,
    /// Saturation scalar applied inside every tanh of the builders.
    pub alpha: f64,
    /// Gaussian kernel bandwidth; None means "use the distance std".
    pub sigma: Option<f64>,
    /// Sparsity threshold for the distance kernel.
    pub threshold: f64,
    /// Whether to use the physical-distance support (requires geometry).
    pub use_incident: bool,
    /// Hyperedge cardinality.
    pub hyper_order: usize,
    /// When the hypergraph is rebuilt from current embeddings.
    pub rebuild: RebuildSchedule,
    /// Mean-normalize hyperedge aggregation instead of plain sums.
    pub hgcn_normalize: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            embed_dim: 8,
            alpha: 1.0,
            sigma: None,
            threshold: 0.1,
            use_incident: false,
            hyper_order: 3,
            rebuild: RebuildSchedule::Epoch,
            hgcn_normalize: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixPropConfig {
    /// Propagation depth.
    pub k: usize,
    /// Residual weight in [0, 1].
    pub alpha: f64,
    /// Use the learned per-entry gate instead of the fixed residual mix.
    pub gated: bool,
}

impl Default for MixPropConfig {
    fn default() -> Self {
        Self {
            k: 2,
            alpha: 0.5,
            gated: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialFusionConfig {
    /// Pairwise-vs-higher-order blend; 1 keeps only the graph branch,
    /// 0 only the hypergraph branch.
    pub gamma: f64,
    pub st_blocks: usize,
    pub epsilon_init: f64,
    pub tblock_channels: usize,
    pub tblock_kernel: usize,
    pub tblock_dilations: Vec<usize>,
}

impl Default for SpatialFusionConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            st_blocks: 1,
            epsilon_init: 0.0,
            tblock_channels: 4,
            tblock_kernel: 2,
            tblock_dilations: vec![1, 2, 4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    /// Patch length.
    pub p: usize,
    /// Stride between patch starts.
    pub s: usize,
    /// Token width.
    pub d_m: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self { p: 16, s: 8, d_m: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub ffn_width: usize,
    /// 0 disables the low-rank adapters; otherwise the base feed-forward
    /// weights freeze and only the factorized deltas train.
    pub adapter_rank: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            ffn_width: 64,
            adapter_rank: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateSetting {
    /// Sigmoid of a learned map over the two branch outputs.
    Learned,
    /// Gate pinned to 1: the fused output is the temporal branch, bit for bit.
    TemporalOnly,
    /// Gate pinned to 0: the fused output is the spatial branch, bit for bit.
    SpatialOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mae,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: Loss,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: Loss::Mae,
            lr: 3e-3,
            epochs: 30,
            batch_size: 8,
            grad_clip: 5.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub window: WindowConfig,
    pub graph: GraphConfig,
    pub mixprop: MixPropConfig,
    pub fusion: SpatialFusionConfig,
    pub patch: PatchSpec,
    pub transformer: TransformerConfig,
    pub gate: GateSetting,
    pub train: TrainConfig,
}

impl Default for GateSetting {
    fn default() -> Self {
        GateSetting::Learned
    }
}

impl ModelConfig {
    pub fn validate(&self) -> ModelResult<()> {
        let w = &self.window;
        if w.lookback == 0 || w.horizon == 0 || w.stride == 0 {
            return Err(ModelError::Config(
                "window lookback, horizon and stride must be positive".into(),
            ));
        }
        if w.lookback < 8 {
            return Err(ModelError::Config(format!(
                "lookback must be at least 8 to compute window statistics, got {}",
                w.lookback
            )));
        }
        if self.graph.embed_dim == 0 {
            return Err(ModelError::Config("embed_dim must be positive".into()));
        }
        if self.graph.alpha <= 0.0 {
            return Err(ModelError::Config(format!(
                "graph alpha must be positive, got {}",
                self.graph.alpha
            )));
        }
        if let Some(s) = self.graph.sigma {
            if s <= 0.0 {
                return Err(ModelError::Config(format!(
                    "sigma must be positive, got {s}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.graph.threshold) {
            return Err(ModelError::Config(format!(
                "threshold must lie in [0, 1), got {}",
                self.graph.threshold
            )));
        }
        if self.graph.hyper_order < 2 {
            return Err(ModelError::Config(format!(
                "hyper_order must be at least 2, got {}",
                self.graph.hyper_order
            )));
        }
        if self.mixprop.k < 1 {
            return Err(ModelError::Config("mixprop depth must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mixprop.alpha) {
            return Err(ModelError::Config(format!(
                "mixprop alpha must lie in [0, 1], got {}",
                self.mixprop.alpha
            )));
        }
        let f = &self.fusion;
        if !(0.0..=1.0).contains(&f.gamma) {
            return Err(ModelError::Config(format!(
                "gamma must lie in [0, 1], got {}",
                f.gamma
            )));
        }
        if f.st_blocks < 1 {
            return Err(ModelError::Config("st_blocks must be at least 1".into()));
        }
        if f.tblock_channels == 0 || f.tblock_kernel < 2 || f.tblock_dilations.is_empty() {
            return Err(ModelError::Config(
                "t-block needs channels >= 1, kernel >= 2 and at least one dilation".into(),
            ));
        }
        for &d in &f.tblock_dilations {
            if d == 0 {
                return Err(ModelError::Config("t-block dilation 0".into()));
            }
            if (f.tblock_kernel - 1) * d >= w.lookback {
                return Err(ModelError::Config(format!(
                    "t-block receptive step (kernel {} - 1) * dilation {d} does not fit lookback {}",
                    f.tblock_kernel, w.lookback
                )));
            }
        }
        let p = &self.patch;
        if p.p == 0 || p.p > w.lookback {
            return Err(ModelError::Config(format!(
                "patch length {} must lie in [1, lookback {}]",
                p.p, w.lookback
            )));
        }
        if p.s == 0 || p.s > p.p {
            return Err(ModelError::Config(format!(
                "patch stride {} must lie in [1, patch length {}]",
                p.s, p.p
            )));
        }
        let t = &self.transformer;
        if t.layers < 1 || t.heads < 1 {
            return Err(ModelError::Config(
                "transformer needs at least 1 layer and 1 head".into(),
            ));
        }
        if p.d_m % t.heads != 0 {
            return Err(ModelError::Config(format!(
                "token width {} not divisible by head count {}",
                p.d_m, t.heads
            )));
        }
        if t.ffn_width == 0 {
            return Err(ModelError::Config("ffn_width must be positive".into()));
        }
        if t.adapter_rank > p.d_m.min(t.ffn_width) {
            return Err(ModelError::Config(format!(
                "adapter rank {} exceeds min(token width {}, ffn width {})",
                t.adapter_rank, p.d_m, t.ffn_width
            )));
        }
        let tr = &self.train;
        if tr.lr <= 0.0 || tr.epochs == 0 || tr.batch_size == 0 {
            return Err(ModelError::Config(
                "lr, epochs and batch_size must be positive".into(),
            ));
        }
        if tr.grad_clip <= 0.0 {
            return Err(ModelError::Config(format!(
                "grad_clip must be positive, got {}",
                tr.grad_clip
            )));
        }
        Ok(())
    }
}
