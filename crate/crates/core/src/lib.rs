//! Cluster recovery from noisy pairwise queries.
//!
//! Items carry hidden group labels. Each queried pair reports either
//! whether the two items share a group (sign model) or the difference of
//! their groups modulo `k` (modular model), corrupted at random. The
//! recovery algorithm samples a random query graph, builds many short,
//! nearly edge-disjoint paths between two items with breadth-first search,
//! and lets the paths vote on the relation between the endpoints.

pub mod analysis;
pub mod decision;
pub mod error;
pub mod graph;
pub mod harness;
pub mod oracle;
pub mod paths;
pub mod seed;

pub use error::{Error, Result};
pub use graph::{QueryGraph, SamplingPlan};
pub use oracle::{Labeling, NoiseSpec, NoisyOracle, QueryResponse};
pub use paths::{BfsTree, PathFamily, PathParams};
