//! Probabilistic Decomposition Transformer for univariate time-series
//! forecasting.
//!
//! An encoder-decoder Transformer emits a Gaussian per forecast step; a
//! conditional variational head rebuilds the forecast mean as trend plus
//! seasonality. Both parts train jointly and are evaluated with ρ-quantile
//! losses.

pub mod autograd;
pub mod data;
pub mod decomposition;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
pub use model::PdTrans;
pub use training::TrainConfig;
pub use transformer::ModelConfig;
