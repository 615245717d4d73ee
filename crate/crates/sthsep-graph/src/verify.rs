//! Checks the guarantee the hop builder makes: hyperedge membership encodes
//! bounded-hop reachability exactly.
//!
//! For each node v let R_v be v plus every node within `order_k - 1` hops,
//! computed here by boolean matrix powers rather than the builder's
//! breadth-first sweep so the two routes are independent. A hypergraph built
//! from those neighborhoods must satisfy both directions:
//!
//! * coverage: for every w in R_v some hyperedge contains v and w while
//!   staying inside R_v (the hyperedge seeded at v is exactly R_v);
//! * anchoring: every hyperedge equals R_u for some of its members u, so no
//!   hyperedge smuggles in a pair that bounded-hop reachability forbids.
//!
//! Checking bare co-membership instead would reject correct hypergraphs:
//! on a 3-node path the middle node's hyperedge contains both endpoints,
//! which sit 2 hops apart, yet the construction is exactly right.

use sthsep_core::TensorF;

use crate::error::{GraphError, GraphResult};
use crate::hypergraph::Hypergraph;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConnectivityCheck {
    Pass,
    /// First offending (v, w): either w is within reach of v but no
    /// hyperedge witnesses it inside R_v, or a hyperedge pairs v with a w
    /// it cannot reach.
    Fail { pair: (usize, usize) },
}

impl ConnectivityCheck {
    pub fn passed(&self) -> bool {
        matches!(self, ConnectivityCheck::Pass)
    }
}

/// Reachability sets by repeated boolean multiplication: row v of the result
/// marks every node whose distance from v is at most `hops`.
pub fn hop_reach_sets(a: &TensorF, hops: usize) -> GraphResult<Vec<Vec<bool>>> {
    if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
        return Err(GraphError::InvalidArgument(format!(
            "adjacency must be square, got {:?}",
            a.shape()
        )));
    }
    let n = a.shape()[0];
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| a.get2(i, j) != 0.0).collect())
        .collect();
    let mut reach: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i == j).collect()).collect();
    for _ in 0..hops {
        let mut next = reach.clone();
        for i in 0..n {
            for k in 0..n {
                if reach[i][k] {
                    for j in 0..n {
                        if adj[k][j] {
                            next[i][j] = true;
                        }
                    }
                }
            }
        }
        if next == reach {
            break;
        }
        reach = next;
    }
    Ok(reach)
}

/// Verifies a hypergraph against independently computed reachability.
pub fn verify_local_connectivity(
    hg: &Hypergraph,
    a: &TensorF,
    order_k: usize,
) -> GraphResult<ConnectivityCheck> {
    if order_k < 2 {
        return Err(GraphError::InvalidArgument(format!(
            "hyperedge order must be at least 2, got {order_k}"
        )));
    }
    if a.shape()[0] != hg.n {
        return Err(GraphError::InvalidArgument(format!(
            "adjacency is {:?} but hypergraph has {} nodes",
            a.shape(),
            hg.n
        )));
    }
    let reach = hop_reach_sets(a, order_k - 1)?;
    let n = hg.n;

    let edge_sets: Vec<Vec<bool>> = hg
        .hyperedges
        .iter()
        .map(|e| {
            let mut mask = vec![false; n];
            for &v in e {
                mask[v] = true;
            }
            mask
        })
        .collect();

    // Coverage: every reachable pair is witnessed inside the neighborhood.
    for v in 0..n {
        for w in 0..n {
            if !reach[v][w] {
                continue;
            }
            let witnessed = edge_sets.iter().any(|mask| {
                mask[v] && mask[w] && mask.iter().zip(&reach[v]).all(|(&m, &r)| !m || r)
            });
            if !witnessed {
                return Ok(ConnectivityCheck::Fail { pair: (v, w) });
            }
        }
    }

    // Anchoring: each hyperedge is some member's full neighborhood.
    for (e, mask) in hg.hyperedges.iter().zip(&edge_sets) {
        let anchored = e.iter().any(|&u| mask == &reach[u]);
        if !anchored {
            // Pick the most telling witness pair: a member beyond some other
            // member's reach if one exists, otherwise a reachable node the
            // hyperedge dropped.
            for &u in e {
                if let Some(w) = e.iter().copied().find(|&w| !reach[u][w]) {
                    return Ok(ConnectivityCheck::Fail { pair: (u, w) });
                }
            }
            let u = e[0];
            let w = (0..n).find(|&w| reach[u][w] && !mask[w]).unwrap_or(u);
            return Ok(ConnectivityCheck::Fail { pair: (u, w) });
        }
    }

    Ok(ConnectivityCheck::Pass)
}
