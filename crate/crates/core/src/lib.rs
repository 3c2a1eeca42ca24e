//! Graph neural networks whose nodes are spatial CNN feature maps.
//!
//! Nodes keep their `[C, H, W]` maps through message passing: messages are
//! 1×1 convolutions over concatenated source, destination and edge maps,
//! summed per destination, refined by 3×3 convolutions and added back onto
//! the node (`X'_j = X_j + A(Σ_i M_ij)`).

pub mod config;
pub mod dataset;
pub mod detfusion;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod graph_io;
pub mod model;
pub mod nn;
pub mod patch;
pub mod train;

pub use dataset::GraphDataset;
pub use error::{Error, ErrorKind, Result};
pub use graph::{Graph, GraphBatch};
pub use model::{Model, ModelConfig, Target};
pub use tgraphx_tensor as tensor;
