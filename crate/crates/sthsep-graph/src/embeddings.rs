//! Learned supports from node embeddings.
//!
//! Two embedding tables drive a skew-difference score matrix whose positive
//! part becomes a directed adjacency: with `F = tanh(alpha * (E W + b))` for
//! each table under one shared map, the result is
//! `relu(tanh(alpha * (F1^T F2 - F2^T F1)))`. The argument is antisymmetric,
//! so the diagonal is zero and at most one of (i,j)/(j,i) survives the relu.
//! A third table feeds the hyperedge builder through its own map,
//! `tanh(alpha * (E3 W + b))`, keeping the embedding width.

use sthsep_core::{CoreError, CoreResult, Graph, NodeId, ParamStore, TensorF};

use crate::error::GraphResult;

/// Parameter names of the shared pairwise map. `weight` is `[d, N]` so the
/// score matrix comes out square; `bias` is `[N]`.
#[derive(Debug, Clone)]
pub struct PairwiseFfn {
    pub weight: String,
    pub bias: String,
}

/// Parameter names of the hyperedge feature map: `weight` `[d, d]`, `bias` `[d]`.
#[derive(Debug, Clone)]
pub struct HyperedgeFfn {
    pub weight: String,
    pub bias: String,
}

fn saturated_map(
    g: &mut Graph<'_>,
    e: NodeId,
    weight: &str,
    bias: &str,
    alpha: f64,
) -> CoreResult<NodeId> {
    let w = g.param(weight)?;
    let b = g.param(bias)?;
    let lin = g.matmul(e, w)?;
    let lin = g.add_bias_rows(lin, b)?;
    let scaled = g.scalar_mul(lin, alpha);
    Ok(g.tanh(scaled))
}

/// Builds the directed adaptive adjacency on the tape; gradients flow to both
/// embedding tables and the shared map.
pub fn adaptive_adjacency_node(
    g: &mut Graph<'_>,
    e1: &str,
    e2: &str,
    ffn: &PairwiseFfn,
    alpha: f64,
) -> CoreResult<NodeId> {
    if alpha <= 0.0 {
        return Err(CoreError::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let e1 = g.param(e1)?;
    let e2 = g.param(e2)?;
    let s1 = g.value(e1).shape().to_vec();
    let s2 = g.value(e2).shape().to_vec();
    if s1 != s2 {
        return Err(CoreError::ShapeMismatch {
            op: "adaptive_adjacency",
            lhs: s1,
            rhs: s2,
        });
    }
    let f1 = saturated_map(g, e1, &ffn.weight, &ffn.bias, alpha)?;
    let f2 = saturated_map(g, e2, &ffn.weight, &ffn.bias, alpha)?;
    let f1t = g.transpose(f1)?;
    let f2t = g.transpose(f2)?;
    let fwd = g.matmul(f1t, f2)?;
    let bwd = g.matmul(f2t, f1)?;
    let skew = g.sub(fwd, bwd)?;
    let scaled = g.scalar_mul(skew, alpha);
    let squashed = g.tanh(scaled);
    Ok(g.relu(squashed))
}

/// Hyperedge features `tanh(alpha * (E3 W + b))`, shape `[N, d]`.
pub fn hyperedge_features_node(
    g: &mut Graph<'_>,
    e3: &str,
    ffn: &HyperedgeFfn,
    alpha: f64,
) -> CoreResult<NodeId> {
    if alpha <= 0.0 {
        return Err(CoreError::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let e3 = g.param(e3)?;
    saturated_map(g, e3, &ffn.weight, &ffn.bias, alpha)
}

fn eval_store(pairs: &[(&str, &TensorF)]) -> CoreResult<ParamStore> {
    let mut store = ParamStore::new();
    for (name, value) in pairs {
        store.insert(*name, (*value).clone())?;
    }
    Ok(store)
}

/// One-shot evaluation of [`adaptive_adjacency_node`] without keeping a tape.
pub fn adaptive_adjacency_eval(
    e1: &TensorF,
    e2: &TensorF,
    weight: &TensorF,
    bias: &TensorF,
    alpha: f64,
) -> GraphResult<TensorF> {
    let store = eval_store(&[("e1", e1), ("e2", e2), ("w", weight), ("b", bias)])?;
    let mut g = Graph::new(&store);
    let node = adaptive_adjacency_node(
        &mut g,
        "e1",
        "e2",
        &PairwiseFfn {
            weight: "w".into(),
            bias: "b".into(),
        },
        alpha,
    )?;
    Ok(g.value(node).clone())
}

/// One-shot evaluation of [`hyperedge_features_node`].
pub fn hyperedge_features_eval(
    e3: &TensorF,
    weight: &TensorF,
    bias: &TensorF,
    alpha: f64,
) -> GraphResult<TensorF> {
    let store = eval_store(&[("e3", e3), ("w", weight), ("b", bias)])?;
    let mut g = Graph::new(&store);
    let node = hyperedge_features_node(
        &mut g,
        "e3",
        &HyperedgeFfn {
            weight: "w".into(),
            bias: "b".into(),
        },
        alpha,
    )?;
    Ok(g.value(node).clone())
}
