//! Hypergraph construction and its incidence matrix.
//!
//! A hyperedge is a sorted set of node indices. "Order" means cardinality:
//! an order-k nearest-neighbor hyperedge holds the seed node plus its k-1
//! nearest neighbors, so order 2 degenerates into plain pairwise edges.

use std::collections::HashSet;

use sthsep_core::TensorF;

use crate::error::{GraphError, GraphResult};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypergraph {
    pub n: usize,
    /// Sorted, duplicate-free node-index sets; the list itself is
    /// duplicate-free in first-appearance order.
    pub hyperedges: Vec<Vec<usize>>,
    pub order_k: usize,
}

impl Hypergraph {
    pub fn new(n: usize, hyperedges: Vec<Vec<usize>>, order_k: usize) -> GraphResult<Self> {
        let mut seen = HashSet::new();
        for e in &hyperedges {
            if e.is_empty() {
                return Err(GraphError::InvalidArgument("empty hyperedge".into()));
            }
            if e.windows(2).any(|w| w[0] >= w[1]) {
                return Err(GraphError::InvalidArgument(format!(
                    "hyperedge {e:?} is not strictly sorted"
                )));
            }
            if *e.last().unwrap() >= n {
                return Err(GraphError::InvalidArgument(format!(
                    "hyperedge {e:?} references a node >= {n}"
                )));
            }
            if !seen.insert(e.clone()) {
                return Err(GraphError::InvalidArgument(format!(
                    "duplicate hyperedge {e:?}"
                )));
            }
        }
        Ok(Self {
            n,
            hyperedges,
            order_k,
        })
    }

    pub fn num_hyperedges(&self) -> usize {
        self.hyperedges.len()
    }
}

#[derive(Debug, Clone)]
pub struct IncidenceMatrix {
    pub n: usize,
    pub m: usize,
    /// `[n, m]` 0/1 matrix; `matrix[i][j] = 1` iff node i sits on hyperedge j.
    pub matrix: TensorF,
}

impl IncidenceMatrix {
    /// Reads the hyperedge sets back out of the columns.
    pub fn to_hyperedges(&self) -> Vec<Vec<usize>> {
        (0..self.m)
            .map(|j| {
                (0..self.n)
                    .filter(|&i| self.matrix.get2(i, j) == 1.0)
                    .collect()
            })
            .collect()
    }
}

fn dedup_in_order(edges: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for e in edges {
        if seen.insert(e.clone()) {
            out.push(e);
        }
    }
    out
}

/// One hyperedge per node: the node plus its `order_k - 1` nearest neighbors
/// by Euclidean distance between feature rows. Distance ties fall to the
/// smaller node index. Duplicate sets collapse.
pub fn knn_hyperedges(features: &TensorF, order_k: usize) -> GraphResult<Hypergraph> {
    if features.rank() != 2 {
        return Err(GraphError::InvalidArgument(format!(
            "features must be [N, d], got {:?}",
            features.shape()
        )));
    }
    let n = features.shape()[0];
    let d = features.shape()[1];
    if order_k > n {
        return Err(GraphError::OrderTooLarge { order_k, n });
    }
    if order_k < 2 {
        return Err(GraphError::InvalidArgument(format!(
            "hyperedge order must be at least 2, got {order_k}"
        )));
    }
    let mut edges = Vec::with_capacity(n);
    for v in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&u| u != v)
            .map(|u| {
                let dist2: f64 = (0..d)
                    .map(|c| {
                        let diff = features.get2(v, c) - features.get2(u, c);
                        diff * diff
                    })
                    .sum();
                (dist2, u)
            })
            .collect();
        others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut e: Vec<usize> = others[..order_k - 1].iter().map(|&(_, u)| u).collect();
        e.push(v);
        e.sort_unstable();
        edges.push(e);
    }
    Hypergraph::new(n, dedup_in_order(edges), order_k)
}

/// One hyperedge per node: the node plus everything reachable within
/// `order_k - 1` hops of it. Duplicate sets collapse.
pub fn hop_hyperedges(a: &TensorF, order_k: usize) -> GraphResult<Hypergraph> {
    validate_binary_symmetric(a)?;
    if order_k < 2 {
        return Err(GraphError::InvalidArgument(format!(
            "hyperedge order must be at least 2, got {order_k}"
        )));
    }
    let n = a.shape()[0];
    let mut edges = Vec::with_capacity(n);
    for v in 0..n {
        // Plain breadth-first sweep out to order_k - 1 hops.
        let mut dist = vec![usize::MAX; n];
        dist[v] = 0;
        let mut frontier = vec![v];
        for hop in 1..order_k {
            let mut next = Vec::new();
            for &u in &frontier {
                for w in 0..n {
                    if a.get2(u, w) != 0.0 && dist[w] == usize::MAX {
                        dist[w] = hop;
                        next.push(w);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        let e: Vec<usize> = (0..n).filter(|&w| dist[w] != usize::MAX).collect();
        edges.push(e);
    }
    Hypergraph::new(n, dedup_in_order(edges), order_k)
}

fn validate_binary_symmetric(a: &TensorF) -> GraphResult<()> {
    if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
        return Err(GraphError::InvalidArgument(format!(
            "adjacency must be square, got {:?}",
            a.shape()
        )));
    }
    let n = a.shape()[0];
    for i in 0..n {
        for j in 0..n {
            let v = a.get2(i, j);
            if v != 0.0 && v != 1.0 {
                return Err(GraphError::InvalidArgument(format!(
                    "adjacency must be 0/1, got {v} at ({i}, {j})"
                )));
            }
            if v != a.get2(j, i) {
                return Err(GraphError::InvalidArgument(format!(
                    "adjacency must be symmetric, differs at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Node-by-hyperedge 0/1 membership matrix.
pub fn incidence(hg: &Hypergraph) -> IncidenceMatrix {
    let m = hg.num_hyperedges();
    let mut matrix = TensorF::zeros(&[hg.n, m]);
    for (j, e) in hg.hyperedges.iter().enumerate() {
        for &i in e {
            matrix.set2(i, j, 1.0);
        }
    }
    IncidenceMatrix { n: hg.n, m, matrix }
}
