//! Temporal branch: the node-mean series is summarized by window statistics
//! (prefix token) and overlapping patches (sequence tokens), run through a
//! small causal transformer, and projected to the forecast horizon. The
//! result is one trend shared by all nodes; node heterogeneity is the
//! spatial branch's job.

use sthsep_core::{CoreError, CoreResult, Graph, NodeId, TensorF};

use crate::config::{PatchSpec, TransformerConfig};
use crate::error::{ModelError, ModelResult};

/// Mean over the node axis of a `[B, N, T, F]` stack, giving `[B, T, F]`.
pub fn avg_pool_nodes(x: &TensorF) -> CoreResult<TensorF> {
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(CoreError::InvalidShape(format!(
            "expected [B, N, T, F], got {shape:?}"
        )));
    }
    let (b, n, t, f) = (shape[0], shape[1], shape[2], shape[3]);
    if n == 0 {
        return Err(CoreError::InvalidArgument("no nodes to pool".into()));
    }
    let mut out = TensorF::zeros(&[b, t, f]);
    let data = x.data();
    for bi in 0..b {
        for ti in 0..t {
            for fi in 0..f {
                let mut acc = 0.0;
                for ni in 0..n {
                    acc += data[((bi * n + ni) * t + ti) * f + fi];
                }
                out.data_mut()[(bi * t + ti) * f + fi] = acc / n as f64;
            }
        }
    }
    Ok(out)
}

/// Summary statistics of one lookback window, rendered into the prefix token.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptStats {
    pub min: f64,
    pub max: f64,
    pub median: f64,
    /// Sign of the least-squares slope; 0 when |slope| < 1e-9.
    pub slope_sign: f64,
    /// The 5 lags with the largest autocorrelation magnitude, descending,
    /// ties to the smaller lag.
    pub top_lags: Vec<usize>,
}

impl PromptStats {
    /// Numeric form fed to the embedding: min, max, median, slope sign, and
    /// the five lags scaled by the window length.
    pub fn to_vector(&self, window_len: usize) -> Vec<f64> {
        let mut v = vec![self.min, self.max, self.median, self.slope_sign];
        for &lag in &self.top_lags {
            v.push(lag as f64 / window_len as f64);
        }
        v
    }
}

pub const STATS_WIDTH: usize = 9;

/// Autocorrelation at one lag: the Pearson correlation between the series
/// and its lagged copy over the pairs that overlap. Scoring only the
/// overlap keeps long lags from being damped for having fewer pairs, and a
/// lag that reproduces the series exactly scores exactly 1, so periodic
/// structure wins ties deterministically. Zero-variance segments score 0.
fn autocorrelation(window: &[f64], lag: usize) -> f64 {
    let n = window.len() - lag;
    if n < 2 {
        return 0.0;
    }
    let head = &window[..n];
    let tail = &window[lag..];
    let mean_h = head.iter().sum::<f64>() / n as f64;
    let mean_t = tail.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut var_h = 0.0;
    let mut var_t = 0.0;
    for i in 0..n {
        let dh = head[i] - mean_h;
        let dt = tail[i] - mean_t;
        num += dh * dt;
        var_h += dh * dh;
        var_t += dt * dt;
    }
    if var_h <= 0.0 || var_t <= 0.0 {
        return 0.0;
    }
    num / (var_h * var_t).sqrt()
}

pub fn prompt_stats(window: &[f64]) -> ModelResult<PromptStats> {
    let l = window.len();
    if l < 8 {
        return Err(ModelError::Config(format!(
            "window statistics need at least 8 steps, got {l}"
        )));
    }
    let min = window.iter().copied().fold(f64::INFINITY, f64::min);
    let max = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sorted = window.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if l % 2 == 1 {
        sorted[l / 2]
    } else {
        0.5 * (sorted[l / 2 - 1] + sorted[l / 2])
    };

    // Least-squares slope of value against step index.
    let t_mean = (l as f64 - 1.0) / 2.0;
    let x_mean = window.iter().sum::<f64>() / l as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, &x) in window.iter().enumerate() {
        let dt = t as f64 - t_mean;
        num += dt * (x - x_mean);
        den += dt * dt;
    }
    let slope = num / den;
    let slope_sign = if slope.abs() < 1e-9 {
        0.0
    } else {
        slope.signum()
    };

    let mut scored: Vec<(f64, usize)> = (1..l)
        .map(|lag| (autocorrelation(window, lag), lag))
        .collect();
    scored.sort_by(|a, b| {
        b.0.abs()
            .partial_cmp(&a.0.abs())
            .unwrap()
            .then(a.1.cmp(&b.1))
    });
    let top_lags = scored.iter().take(5).map(|&(_, lag)| lag).collect();

    Ok(PromptStats {
        min,
        max,
        median,
        slope_sign,
        top_lags,
    })
}

/// Number of patches a length-`t` series yields: `floor((t - p) / s) + 2`,
/// counting the final patch that runs into the replicated tail.
pub fn patch_count(t: usize, p: usize, s: usize) -> usize {
    (t - p) / s + 2
}

/// Splits a series into overlapping patches of length `p` at stride `s`.
/// The series is extended by `s` copies of its last value first, which makes
/// the patch count match [`patch_count`] exactly.
pub fn patchify(series: &[f64], spec: &PatchSpec) -> ModelResult<TensorF> {
    let t = series.len();
    let (p, s) = (spec.p, spec.s);
    if p == 0 || s == 0 || s > p {
        return Err(ModelError::Config(format!(
            "patch length {p} and stride {s} must satisfy 1 <= stride <= length"
        )));
    }
    if p > t {
        return Err(ModelError::Config(format!(
            "patch length {p} exceeds series length {t}"
        )));
    }
    let mut padded = series.to_vec();
    padded.extend(std::iter::repeat(series[t - 1]).take(s));
    let count = patch_count(t, p, s);
    let mut data = Vec::with_capacity(count * p);
    for i in 0..count {
        let start = i * s;
        data.extend_from_slice(&padded[start..start + p]);
    }
    Ok(TensorF::new(vec![count, p], data)?)
}

/// Names of one transformer layer's parameters.
#[derive(Debug, Clone)]
pub struct LayerNames {
    /// Per-head `(wq, wk, wv)`, each `[d_m, d_h]`.
    pub heads: Vec<(String, String, String)>,
    /// Output projection after head concatenation: `([d_m, d_m], [d_m])`.
    pub attn_out: (String, String),
    pub ffn: FfnNames,
}

#[derive(Debug, Clone)]
pub struct FfnNames {
    pub w1: String,
    pub b1: String,
    pub w2: String,
    pub b2: String,
    /// Low-rank deltas; when present the base `w1`/`w2` are frozen and the
    /// effective weight is `W + B A` with `B` starting at zero.
    pub adapters: Option<AdapterNames>,
}

#[derive(Debug, Clone)]
pub struct AdapterNames {
    pub w1_down: String,
    pub w1_up: String,
    pub w2_down: String,
    pub w2_up: String,
}

#[derive(Debug, Clone)]
pub struct TemporalNames {
    pub patch: (String, String),
    pub stats: (String, String),
    pub pos: String,
    pub layers: Vec<LayerNames>,
    pub proj: (String, String),
}

/// Builds the token sequence: prefix token from the statistics, one token
/// per patch, plus learned additive positions. Shape `[1 + N_P, d_m]`.
pub fn embed_inputs(
    g: &mut Graph<'_>,
    patches: &TensorF,
    stats: &PromptStats,
    window_len: usize,
    names: &TemporalNames,
) -> CoreResult<NodeId> {
    let stats_vec = stats.to_vector(window_len);
    debug_assert_eq!(stats_vec.len(), STATS_WIDTH);
    let stats_in = g.input(TensorF::new(vec![1, STATS_WIDTH], stats_vec)?);
    let ws = g.param(&names.stats.0)?;
    let bs = g.param(&names.stats.1)?;
    let prefix = g.matmul(stats_in, ws)?;
    let prefix = g.add_bias_rows(prefix, bs)?;

    let patches_in = g.input(patches.clone());
    let wp = g.param(&names.patch.0)?;
    let bp = g.param(&names.patch.1)?;
    let tokens = g.matmul(patches_in, wp)?;
    let tokens = g.add_bias_rows(tokens, bp)?;

    let seq = g.concat(&[prefix, tokens], 0)?;
    let pos = g.param(&names.pos)?;
    g.add(seq, pos)
}

/// Causal mask: 0 on and below the diagonal, a large negative constant
/// above. After the softmax's max subtraction those scores underflow to an
/// exact zero weight, so later tokens cannot leak backward even at the bit
/// level.
fn causal_mask(g: &mut Graph<'_>, len: usize) -> NodeId {
    let mut m = TensorF::zeros(&[len, len]);
    for i in 0..len {
        for j in (i + 1)..len {
            m.set2(i, j, -1e30);
        }
    }
    g.constant(m)
}

/// One decoder layer: per-head scaled dot-product attention under a causal
/// mask, output projection, then a two-layer relu feed-forward, each behind
/// a residual add and layer normalization.
pub fn transformer_layer(
    g: &mut Graph<'_>,
    z: NodeId,
    names: &LayerNames,
    heads: usize,
) -> CoreResult<NodeId> {
    let shape = g.value(z).shape().to_vec();
    let (len, d_m) = (shape[0], shape[1]);
    if d_m % heads != 0 || names.heads.len() != heads {
        return Err(CoreError::InvalidArgument(format!(
            "width {d_m} with {heads} heads ({} named)",
            names.heads.len()
        )));
    }
    let d_h = d_m / heads;
    let scale = 1.0 / (d_h as f64).sqrt();
    let mask = causal_mask(g, len);

    let mut head_outputs = Vec::with_capacity(heads);
    for (wq, wk, wv) in &names.heads {
        let wq = g.param(wq)?;
        let wk = g.param(wk)?;
        let wv = g.param(wv)?;
        let q = g.matmul(z, wq)?;
        let k = g.matmul(z, wk)?;
        let v = g.matmul(z, wv)?;
        let k_t = g.transpose(k)?;
        let scores = g.matmul(q, k_t)?;
        let scores = g.scalar_mul(scores, scale);
        let masked = g.add(scores, mask)?;
        let attn = g.softmax(masked, 1)?;
        head_outputs.push(g.matmul(attn, v)?);
    }
    let concat = g.concat(&head_outputs, 1)?;
    let wo = g.param(&names.attn_out.0)?;
    let bo = g.param(&names.attn_out.1)?;
    let mhsa = g.matmul(concat, wo)?;
    let mhsa = g.add_bias_rows(mhsa, bo)?;

    let attended = g.add(z, mhsa)?;
    let z_mid = g.layer_norm(attended)?;

    let ffn_out = feed_forward(g, z_mid, &names.ffn)?;
    let residual = g.add(z_mid, ffn_out)?;
    g.layer_norm(residual)
}

/// Effective weight for one adapted matrix: `W + B A`, where `B` is the
/// zero-initialized down projection. Without adapters this is `W` itself,
/// not a sum with zero, so disabling adapters changes nothing at all.
fn effective_weight(
    g: &mut Graph<'_>,
    base: &str,
    adapter: Option<(&str, &str)>,
) -> CoreResult<NodeId> {
    let w = g.param(base)?;
    match adapter {
        None => Ok(w),
        Some((down, up)) => {
            let b = g.param(down)?;
            let a = g.param(up)?;
            let delta = g.matmul(b, a)?;
            g.add(w, delta)
        }
    }
}

fn feed_forward(g: &mut Graph<'_>, z: NodeId, names: &FfnNames) -> CoreResult<NodeId> {
    let (ad1, ad2) = match &names.adapters {
        Some(a) => (
            Some((a.w1_down.as_str(), a.w1_up.as_str())),
            Some((a.w2_down.as_str(), a.w2_up.as_str())),
        ),
        None => (None, None),
    };
    let w1 = effective_weight(g, &names.w1, ad1)?;
    let b1 = g.param(&names.b1)?;
    let w2 = effective_weight(g, &names.w2, ad2)?;
    let b2 = g.param(&names.b2)?;
    let hidden = g.matmul(z, w1)?;
    let hidden = g.add_bias_rows(hidden, b1)?;
    let hidden = g.relu(hidden);
    let out = g.matmul(hidden, w2)?;
    g.add_bias_rows(out, b2)
}

/// Flattens the token block and maps it to the horizon, then repeats the
/// trend across all `n` node columns (an exact copy per column).
pub fn project_trend(
    g: &mut Graph<'_>,
    z: NodeId,
    proj: &(String, String),
    n_nodes: usize,
) -> CoreResult<NodeId> {
    let shape = g.value(z).shape().to_vec();
    let flat = g.reshape(z, &[1, shape[0] * shape[1]])?;
    let w = g.param(&proj.0)?;
    let b = g.param(&proj.1)?;
    let trend = g.matmul(flat, w)?;
    let trend = g.add_bias_rows(trend, b)?;
    let col = g.transpose(trend)?;
    let ones = g.constant(TensorF::filled(&[1, n_nodes], 1.0));
    g.matmul(col, ones)
}

/// Full temporal branch: `[L, N]` window in, `[H, N]` trend block out.
pub fn temporal_branch(
    g: &mut Graph<'_>,
    x_window: &TensorF,
    names: &TemporalNames,
    patch: &PatchSpec,
    transformer: &TransformerConfig,
) -> CoreResult<NodeId> {
    let l = x_window.shape()[0];
    let n = x_window.shape()[1];
    // Node-mean series; fixed per window, so it enters as data, not tape ops.
    let mut pooled = vec![0.0; l];
    for (t, v) in pooled.iter_mut().enumerate() {
        *v = (0..n).map(|i| x_window.get2(t, i)).sum::<f64>() / n as f64;
    }
    let stats = prompt_stats(&pooled)
        .map_err(|e| CoreError::InvalidArgument(e.to_string()))?;
    let patches =
        patchify(&pooled, patch).map_err(|e| CoreError::InvalidArgument(e.to_string()))?;

    let mut z = embed_inputs(g, &patches, &stats, l, names)?;
    for layer in &names.layers {
        z = transformer_layer(g, z, layer, transformer.heads)?;
    }
    project_trend(g, z, &names.proj, n)
}
