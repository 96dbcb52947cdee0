//! Group recommendation over a group-user-item interaction graph.
//!
//! A two-layer heterogeneous GNN (max-pool SAGE convolutions on the
//! user-item and group-item edges, single-head attention from members to
//! their group) produces node embeddings; the two layer outputs are blended
//! by the dataset's interactive repetition rate and groups are matched to
//! items by dot product.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod graph;
pub mod irr;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
