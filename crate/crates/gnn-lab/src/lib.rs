//! Desk-scale laboratory for probing the implicit bias that global pooling
//! layers induce in graph neural networks trained for graph classification.
//!
//! The pieces, bottom to top:
//!
//! - [`graph`]: attributed graphs, planted patterns, and the occurrence /
//!   connectedness predicates that partition a dataset into D1 / D0 / D-perp.
//! - [`dataset`]: synthesis of partitioned grid-graph datasets and planting
//!   into arbitrary host graphs, with post-hoc verification.
//! - [`autodiff`]: a small tape-based reverse-mode engine over dense `f64`
//!   matrices, plus a finite-difference oracle.
//! - [`model`]: 1-layer GCN / GAT forward passes with max / average / sum /
//!   attention pooling and a sigmoid classifier head.
//! - [`train`]: binary cross-entropy, (mini)batch gradient descent, a
//!   closed-form gradient route for the attention model, and gradient
//!   verification.
//! - [`theory`]: the target direction built from the planted pattern and
//!   monitors for the alignment quantities it predicts during training.
//! - [`oracle`]: exhaustive search for discriminative subgraphs shared by
//!   all positive and no negative graphs.
//! - [`experiments`]: end-to-end experiment drivers with tabular reports.

pub mod autodiff;
pub mod dataset;
pub mod experiments;
pub mod graph;
pub mod model;
pub mod oracle;
pub mod report;
pub mod theory;
pub mod train;

pub use graph::{classify_partition, connected_embedding, grid_graph, occurs};
pub use graph::{Embedding, Graph, Partition, Pattern, PatternKind};
