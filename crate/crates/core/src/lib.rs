//! General linear threshold (GLT) diffusion models.

pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod graph;
pub mod inference;
pub mod influence;
pub mod likelihood;
pub mod model;
pub mod rng;
pub mod thresholds;

pub use error::{GltError, Result};
pub use graph::{Graph, NodeSet, SeedDistribution};
pub use model::{GltModel, Trace, Truncation};
pub use rng::SeedTree;
pub use thresholds::ThresholdSpec;
