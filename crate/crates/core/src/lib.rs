//! Path attribution for differentiable classifiers.
//!
//! The crate provides canonical integrated gradients, expected gradients,
//! an optimized "feature absence" baseline, and a path integrator that only
//! accumulates gradients of valid path features. An exact oracle for
//! explicit piecewise-linear functions, executable axiom checks and the
//! insertion/deletion and Sensitivity-N evaluation protocols sit alongside.

pub mod axioms;
pub mod baseline;
pub mod datasets;
pub mod digest;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod path;
pub mod pwl;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod valid_path;

pub use error::{Error, Result};
pub use model::{Layer, Model, ModelSpec, OutputMode};
pub use pwl::PwlModel;
pub use scalar::{ClassOutput, ScalarModel};
pub use tensor::{TensorF, ValueRange};
