//! Spatial branch: graph propagation over learned and physical supports,
//! hypergraph message passing, their blend, and stacked spatial/temporal
//! convolution blocks ending in a per-node linear head over the time axis.

use sthsep_core::{CoreError, CoreResult, Graph, NodeId, TensorF};
use sthsep_graph::{adaptive_adjacency_node, normalize_adjacency_node, PairwiseFfn};

use crate::config::{MixPropConfig, ModelConfig};

/// Optional learned gate for the propagation mix.
#[derive(Debug, Clone)]
pub enum MixPropGate {
    None,
    /// Name of the `[C, C]` gate weight.
    Weight(String),
}

/// Iterated propagation over a normalized support. Ungated form mixes a
/// fixed residual: `X <- alpha * X + (1 - alpha) * A X`. Gated form learns
/// the mix per entry: `G = sigmoid(X W_g)`, `X <- G .* X + (1 - G) .* A X`.
/// Returns the final layer.
pub fn mixprop(
    g: &mut Graph<'_>,
    x: NodeId,
    a_norm: NodeId,
    cfg: &MixPropConfig,
    gate: &MixPropGate,
) -> CoreResult<NodeId> {
    if cfg.k < 1 {
        return Err(CoreError::InvalidArgument(
            "propagation depth must be at least 1".into(),
        ));
    }
    let mut h = x;
    for _ in 0..cfg.k {
        match gate {
            MixPropGate::None => {
                if cfg.alpha == 1.0 {
                    // Residual-only mix: the support never contributes.
                    continue;
                }
                let prop = g.matmul(a_norm, h)?;
                let scaled_prop = g.scalar_mul(prop, 1.0 - cfg.alpha);
                if cfg.alpha == 0.0 {
                    h = scaled_prop;
                } else {
                    let res = g.scalar_mul(h, cfg.alpha);
                    h = g.add(res, scaled_prop)?;
                }
            }
            MixPropGate::Weight(name) => {
                let w = g.param(name)?;
                let pre = g.matmul(h, w)?;
                let gate = g.sigmoid(pre);
                let prop = g.matmul(a_norm, h)?;
                let keep = g.mul(gate, h)?;
                let ones = g.constant(TensorF::filled(g.value(gate).shape(), 1.0));
                let inv = g.sub(ones, gate)?;
                let take = g.mul(inv, prop)?;
                h = g.add(keep, take)?;
            }
        }
    }
    Ok(h)
}

/// Three-support propagation: the learned adjacency, its transpose, and
/// (when geometry exists) the distance kernel, each normalized, summed.
pub fn adaptive_gcn(
    g: &mut Graph<'_>,
    x: NodeId,
    a_adaptive: NodeId,
    a_incident_norm: Option<NodeId>,
    cfg: &MixPropConfig,
    gate: &MixPropGate,
) -> CoreResult<NodeId> {
    let a_norm = normalize_adjacency_node(g, a_adaptive)?;
    let a_norm_t = g.transpose(a_norm)?;
    let fwd = mixprop(g, x, a_norm, cfg, gate)?;
    let bwd = mixprop(g, x, a_norm_t, cfg, gate)?;
    let mut out = g.add(fwd, bwd)?;
    if let Some(inc) = a_incident_norm {
        let phys = mixprop(g, x, inc, cfg, gate)?;
        out = g.add(out, phys)?;
    }
    Ok(out)
}

/// Parameter names for the hypergraph convolution. `enc: None` is the
/// identity-encoder hook used by the hand-evaluated tests.
#[derive(Debug, Clone)]
pub struct HgcnNames {
    pub enc: Option<(String, String)>,
    pub weight: String,
}

/// Two-step hypergraph message passing: encode nodes, pool each hyperedge
/// (`relu` of the summed encoded members times a weight), then sum each
/// node's hyperedges back. `normalize` swaps both sums for means.
pub fn hypergraph_conv(
    g: &mut Graph<'_>,
    x: NodeId,
    incidence: NodeId,
    names: &HgcnNames,
    normalize: bool,
) -> CoreResult<NodeId> {
    let x_enc = match &names.enc {
        Some((w, b)) => {
            let w = g.param(w)?;
            let b = g.param(b)?;
            let lin = g.matmul(x, w)?;
            g.add_bias_rows(lin, b)?
        }
        None => x,
    };
    let w = g.param(&names.weight)?;
    let xw = g.matmul(x_enc, w)?;
    let h_t = g.transpose(incidence)?;
    let mut edge_pre = g.matmul(h_t, xw)?;
    if normalize {
        let inv_size = inverse_count_rows(g, h_t);
        edge_pre = g.scale_rows(edge_pre, inv_size)?;
    }
    let edge = g.relu(edge_pre);
    let mut node = g.matmul(incidence, edge)?;
    if normalize {
        let inv_deg = inverse_count_rows(g, incidence);
        node = g.scale_rows(node, inv_deg)?;
    }
    Ok(node)
}

/// 1 / row-sum of a 0/1 matrix, guarding empty rows, as a constant node.
fn inverse_count_rows(g: &mut Graph<'_>, zero_one: NodeId) -> NodeId {
    let m = g.value(zero_one);
    let rows = m.shape()[0];
    let cols = m.shape()[1];
    let mut inv = TensorF::zeros(&[rows]);
    for r in 0..rows {
        let count: f64 = (0..cols).map(|c| m.get2(r, c)).sum();
        inv.data_mut()[r] = if count > 0.0 { 1.0 / count } else { 0.0 };
    }
    g.constant(inv)
}

/// Convex blend `gamma * gcn + (1 - gamma) * hgcn`. The endpoints return the
/// branch node itself so degeneration is exact to the bit, not just to
/// rounding.
pub fn spatial_fuse(
    g: &mut Graph<'_>,
    gcn: NodeId,
    hgcn: NodeId,
    gamma: f64,
) -> CoreResult<NodeId> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(CoreError::InvalidArgument(format!(
            "gamma must lie in [0, 1], got {gamma}"
        )));
    }
    if gamma == 1.0 {
        return Ok(gcn);
    }
    if gamma == 0.0 {
        return Ok(hgcn);
    }
    let a = g.scalar_mul(gcn, gamma);
    let b = g.scalar_mul(hgcn, 1.0 - gamma);
    g.add(a, b)
}

/// Per-timestep neighbor aggregation with a learnable self weight:
/// `h <- relu((1 + eps) h + S h)` applied at every step of a `[T, N, C]`
/// block, with `S` a binary support whose rows list each node's neighbors.
pub fn s_block(
    g: &mut Graph<'_>,
    h: NodeId,
    support: NodeId,
    epsilon: &str,
) -> CoreResult<NodeId> {
    let shape = g.value(h).shape().to_vec();
    if shape.len() != 3 {
        return Err(CoreError::InvalidShape(format!(
            "expected [T, N, C] input, got {shape:?}"
        )));
    }
    let (t, n, c) = (shape[0], shape[1], shape[2]);
    // Batch the per-timestep support matmul by folding T and C together.
    let node_major = g.permute(h, &[1, 0, 2])?;
    let flat = g.reshape(node_major, &[n, t * c])?;
    let mixed = g.matmul(support, flat)?;
    let unflat = g.reshape(mixed, &[n, t, c])?;
    let messages = g.permute(unflat, &[1, 0, 2])?;

    let eps = g.param(epsilon)?;
    let self_weight = g.scalar_add(eps, 1.0);
    let self_term = g.mul_scalar_node(h, self_weight)?;
    let summed = g.add(self_term, messages)?;
    Ok(g.relu(summed))
}

/// Gated dilated temporal convolution: a stack of causal convolutions (one
/// per dilation) feeds a tanh/sigmoid output gate, keeping every value
/// strictly inside (-1, 1).
pub fn t_block(
    g: &mut Graph<'_>,
    chi: NodeId,
    convs: &[(String, String)],
    dilations: &[usize],
) -> CoreResult<NodeId> {
    if convs.len() != dilations.len() {
        return Err(CoreError::InvalidArgument(format!(
            "{} conv layers for {} dilations",
            convs.len(),
            dilations.len()
        )));
    }
    let mut q = chi;
    for ((w, b), &d) in convs.iter().zip(dilations) {
        let w = g.param(w)?;
        let b = g.param(b)?;
        q = g.conv1d_causal(q, w, b, d)?;
    }
    let content = g.tanh(q);
    let gate = g.sigmoid(q);
    g.mul(content, gate)
}

/// Every parameter name the spatial branch touches, in forward order.
#[derive(Debug, Clone)]
pub struct SpatialNames {
    pub e1: String,
    pub e2: String,
    pub pair: PairwiseFfn,
    pub mixprop_gate: Option<String>,
    pub hgcn: HgcnNames,
    pub lift: (String, String),
    pub blocks: Vec<BlockNames>,
    pub collapse: (String, String),
    pub head: (String, String),
}

#[derive(Debug, Clone)]
pub struct BlockNames {
    pub epsilon: String,
    pub convs: Vec<(String, String)>,
}

/// Static (non-learned) supports the branch consumes.
pub struct SpatialSupports<'a> {
    /// Normalized distance-kernel adjacency, when geometry exists.
    pub incident_norm: Option<&'a TensorF>,
    /// Node-by-hyperedge membership matrix.
    pub incidence: &'a TensorF,
    /// Binary neighbor support for the S-blocks.
    pub sblock_support: &'a TensorF,
}

/// Full spatial branch: lookback window `[L, N]` in, horizon block `[H, N]`
/// out. The window enters twice: node-major `[N, L]` for the propagation
/// stage, then time-major through the stacked blocks.
pub fn spatial_branch(
    g: &mut Graph<'_>,
    x_window: &TensorF,
    supports: &SpatialSupports<'_>,
    names: &SpatialNames,
    cfg: &ModelConfig,
) -> CoreResult<NodeId> {
    let l = x_window.shape()[0];
    let n = x_window.shape()[1];
    let gamma = cfg.fusion.gamma;
    let gate = match &names.mixprop_gate {
        Some(w) if cfg.mixprop.gated => MixPropGate::Weight(w.clone()),
        _ => MixPropGate::None,
    };

    let x_in = g.input(x_window.clone());
    let x_nodes = g.transpose(x_in)?;

    // Propagation stage on [N, L]; skip whichever branch the blend ignores.
    let fused = if gamma == 1.0 {
        let a_adp = adaptive_adjacency_node(g, &names.e1, &names.e2, &names.pair, cfg.graph.alpha)?;
        let inc = supports.incident_norm.map(|m| g.constant(m.clone()));
        adaptive_gcn(g, x_nodes, a_adp, inc, &cfg.mixprop, &gate)?
    } else if gamma == 0.0 {
        let h = g.constant(supports.incidence.clone());
        hypergraph_conv(g, x_nodes, h, &names.hgcn, cfg.graph.hgcn_normalize)?
    } else {
        let a_adp = adaptive_adjacency_node(g, &names.e1, &names.e2, &names.pair, cfg.graph.alpha)?;
        let inc = supports.incident_norm.map(|m| g.constant(m.clone()));
        let gcn = adaptive_gcn(g, x_nodes, a_adp, inc, &cfg.mixprop, &gate)?;
        let h = g.constant(supports.incidence.clone());
        let hgcn = hypergraph_conv(g, x_nodes, h, &names.hgcn, cfg.graph.hgcn_normalize)?;
        spatial_fuse(g, gcn, hgcn, gamma)?
    };

    // Time-major stack: [N, L] -> [L, N, 1] -> lift channels -> blocks.
    let time_major = g.transpose(fused)?;
    let flat_tn = g.reshape(time_major, &[l * n, 1])?;
    let lift_w = g.param(&names.lift.0)?;
    let lift_b = g.param(&names.lift.1)?;
    let lifted = g.matmul(flat_tn, lift_w)?;
    let lifted = g.add_bias_rows(lifted, lift_b)?;
    let c = cfg.fusion.tblock_channels;
    let mut h = g.reshape(lifted, &[l, n, c])?;

    let support = g.constant(supports.sblock_support.clone());
    for block in &names.blocks {
        let s_out = s_block(g, h, support, &block.epsilon)?;
        let t_out = t_block(g, s_out, &block.convs, &cfg.fusion.tblock_dilations)?;
        h = g.add(h, t_out)?;
    }

    // Collapse channels, then map the time axis to the horizon per node.
    let flat = g.reshape(h, &[l * n, c])?;
    let col_w = g.param(&names.collapse.0)?;
    let col_b = g.param(&names.collapse.1)?;
    let collapsed = g.matmul(flat, col_w)?;
    let collapsed = g.add_bias_rows(collapsed, col_b)?;
    let series = g.reshape(collapsed, &[l, n])?;
    let per_node = g.transpose(series)?;
    let head_w = g.param(&names.head.0)?;
    let head_b = g.param(&names.head.1)?;
    let horizon = g.matmul(per_node, head_w)?;
    let horizon = g.add_bias_rows(horizon, head_b)?;
    g.transpose(horizon)
}
