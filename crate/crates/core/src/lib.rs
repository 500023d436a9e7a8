//! Geometric graph U-Nets.
//!
//! Select-reduce-connect pooling for geometric graphs, invariant and
//! equivariant message passing on a small reverse-mode tensor engine,
//! geometric Weisfeiler-Leman refinement tests and the k-chain benchmark.

pub mod chains;
pub mod error;
pub mod geom;
pub mod gwl;
pub mod layers;
pub mod pool;
pub mod props;
pub mod protein;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{GeoError, Result};
pub use geom::{apply_motion, edge_geometry, knn_edges, EdgeGeometry, GeometricGraph, RigidMotion};
