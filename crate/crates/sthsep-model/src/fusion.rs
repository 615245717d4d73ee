//! Combines the temporal trend and the spatial refinement with a learned
//! per-entry gate. Forcing the gate to an endpoint returns the surviving
//! branch's node untouched, so a degenerate configuration is bit-identical
//! to never having built the other branch.

use sthsep_core::{CoreResult, Graph, NodeId, TensorF};

/// How the two branch outputs are mixed.
#[derive(Debug, Clone)]
pub enum GateBehavior {
    /// `gate = sigmoid(w0 * O1 + w1 * O2 + b)` with scalar weights shared
    /// across entries; `out = O1 * gate + O2 * (1 - gate)`.
    Learned { weight: String, bias: String },
    /// Fixed gate value. 1.0 passes the temporal output through unchanged,
    /// 0.0 the spatial output.
    Forced(f64),
}

/// Returns the fused output and, for the learned case, the gate node.
pub fn gated_fusion(
    g: &mut Graph<'_>,
    temporal: NodeId,
    spatial: NodeId,
    behavior: &GateBehavior,
) -> CoreResult<(NodeId, Option<NodeId>)> {
    match behavior {
        GateBehavior::Forced(v) if *v == 1.0 => Ok((temporal, None)),
        GateBehavior::Forced(v) if *v == 0.0 => Ok((spatial, None)),
        GateBehavior::Forced(v) => {
            let fused_t = g.scalar_mul(temporal, *v);
            let fused_s = g.scalar_mul(spatial, 1.0 - *v);
            Ok((g.add(fused_t, fused_s)?, None))
        }
        GateBehavior::Learned { weight, bias } => {
            let shape = g.value(temporal).shape().to_vec();
            let w = g.param(weight)?;
            let b = g.param(bias)?;
            let w0 = g.slice_axis0(w, 0, 1)?;
            let w1 = g.slice_axis0(w, 1, 1)?;
            let term_t = g.mul_scalar_node(temporal, w0)?;
            let term_s = g.mul_scalar_node(spatial, w1)?;
            let ones = g.constant(TensorF::filled(&shape, 1.0));
            let bias_field = g.mul_scalar_node(ones, b)?;
            let pre = g.add(term_t, term_s)?;
            let pre = g.add(pre, bias_field)?;
            let gate = g.sigmoid(pre);
            let keep_t = g.mul(temporal, gate)?;
            let inv = g.sub(ones, gate)?;
            let keep_s = g.mul(spatial, inv)?;
            let fused = g.add(keep_t, keep_s)?;
            Ok((fused, Some(gate)))
        }
    }
}
