//! Spatial support builders: a learned asymmetric adjacency derived from node
//! embeddings, a Gaussian distance-kernel adjacency, and hypergraphs built
//! either from embedding-space nearest neighbors or hop neighborhoods, plus a
//! verifier for the hop-reachability/membership equivalence the hop builder
//! guarantees.

pub mod adjacency;
pub mod embeddings;
pub mod error;
pub mod hypergraph;
pub mod verify;

pub use adjacency::{gaussian_incident, normalize_adjacency, normalize_adjacency_node};
pub use embeddings::{
    adaptive_adjacency_eval, adaptive_adjacency_node, hyperedge_features_eval,
    hyperedge_features_node, HyperedgeFfn, PairwiseFfn,
};
pub use error::{GraphError, GraphResult};
pub use hypergraph::{hop_hyperedges, incidence, knn_hyperedges, Hypergraph, IncidenceMatrix};
pub use verify::{hop_reach_sets, verify_local_connectivity, ConnectivityCheck};
