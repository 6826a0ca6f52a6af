//! Minimal reverse-mode automatic differentiation over dense matrices.

pub mod graph;
pub mod kernels;
pub mod params;
pub mod scalar;

pub use graph::{Gradients, Graph, Var};
pub use kernels::{AttnShape, Mask};
pub use params::{Init, Param, ParamId, ParamStore};
pub use scalar::Scalar;
