//! Regression-classification cascaded network (RCCN) for monocular depth
//! estimation, built from scratch: tensor primitives with hand-written
//! backward passes, depth discretization, the cascaded model with its
//! refinement and fusion stages, losses and metrics, a procedural RGB-D scene
//! generator, and the staged trainer.

pub mod data;
pub mod discretize;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use discretize::{DiscretizationScheme, Mode};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use model::{ModelState, NetworkSpec, Variant};
pub use tensor::Tensor;
