//! Distance-kernel adjacency and symmetric-normalization.

use sthsep_core::{CoreResult, Graph, NodeId, TensorF};

use crate::error::{GraphError, GraphResult};

/// Gaussian kernel over pairwise distances: `A[i][j] = exp(-d^2 / sigma^2)`
/// kept only when it reaches `threshold`, with a unit diagonal regardless.
/// Infinite distances (unconnected pairs from an edge list) decay to zero.
pub fn gaussian_incident(
    distances: Option<&TensorF>,
    sigma: f64,
    threshold: f64,
) -> GraphResult<TensorF> {
    let d = distances.ok_or(GraphError::MissingDistances)?;
    if d.rank() != 2 || d.shape()[0] != d.shape()[1] {
        return Err(GraphError::InvalidArgument(format!(
            "distance matrix must be square, got {:?}",
            d.shape()
        )));
    }
    if sigma <= 0.0 {
        return Err(GraphError::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(GraphError::InvalidArgument(format!(
            "threshold must lie in [0, 1), got {threshold}"
        )));
    }
    let n = d.shape()[0];
    let mut a = TensorF::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                a.set2(i, j, 1.0);
                continue;
            }
            let dist = d.get2(i, j);
            let w = (-(dist * dist) / (sigma * sigma)).exp();
            a.set2(i, j, if w >= threshold { w } else { 0.0 });
        }
    }
    Ok(a)
}

/// Default kernel bandwidth: the standard deviation of all off-diagonal
/// finite distances. Falls back to 1 when no finite pair exists.
pub fn default_sigma(distances: &TensorF) -> f64 {
    let n = distances.shape()[0];
    let mut vals = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && distances.get2(i, j).is_finite() {
                vals.push(distances.get2(i, j));
            }
        }
    }
    if vals.is_empty() {
        return 1.0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
    let s = var.sqrt();
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Symmetric normalization with self-loops: `D^{-1/2} (A + I) D^{-1/2}` where
/// `D` is the row-degree of `A + I`. Isolated nodes keep degree 1.
pub fn normalize_adjacency(a: &TensorF) -> GraphResult<TensorF> {
    if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
        return Err(GraphError::InvalidArgument(format!(
            "adjacency must be square, got {:?}",
            a.shape()
        )));
    }
    let n = a.shape()[0];
    if a.data().iter().any(|&v| v < 0.0) {
        return Err(GraphError::InvalidArgument(
            "adjacency entries must be nonnegative".into(),
        ));
    }
    let mut with_loops = a.clone();
    for i in 0..n {
        with_loops.set2(i, i, with_loops.get2(i, i) + 1.0);
    }
    let mut d_inv_sqrt = vec![0.0; n];
    for i in 0..n {
        let deg: f64 = (0..n).map(|j| with_loops.get2(i, j)).sum();
        d_inv_sqrt[i] = deg.powf(-0.5);
    }
    let mut out = TensorF::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            out.set2(i, j, d_inv_sqrt[i] * with_loops.get2(i, j) * d_inv_sqrt[j]);
        }
    }
    Ok(out)
}

/// Tape version of [`normalize_adjacency`] so gradients reach a learned
/// adjacency. Same formula; degrees stay >= 1 thanks to the self-loops, so
/// the inverse square root is smooth everywhere it is evaluated.
pub fn normalize_adjacency_node(g: &mut Graph<'_>, a: NodeId) -> CoreResult<NodeId> {
    let shape = g.value(a).shape().to_vec();
    let n = shape[0];
    let mut eye = TensorF::zeros(&[n, n]);
    for i in 0..n {
        eye.set2(i, i, 1.0);
    }
    let eye = g.constant(eye);
    let with_loops = g.add(a, eye)?;
    let deg = g.sum_axis(with_loops, 1)?;
    let d_inv_sqrt = g.pow_const(deg, -0.5);
    let rows = g.scale_rows(with_loops, d_inv_sqrt)?;
    g.scale_cols(rows, d_inv_sqrt)
}
