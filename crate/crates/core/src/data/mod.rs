//! Series ingestion, covariates, scaling, windowing and synthetic fixtures.

pub mod covariates;
pub mod dataset;
pub mod scaling;
pub mod synthetic;
pub mod windows;

pub use covariates::{featurize_covariates, N_COVARIATES};
pub use dataset::{load_csv, read_csv, CsvSchema, Frequency, Series, TimeSeriesDataset};
pub use scaling::compute_scale;
pub use synthetic::{gen_synthetic, GroundTruth, SyntheticSpec};
pub use windows::{make_windows, Window, WindowBatch, WindowMode};
