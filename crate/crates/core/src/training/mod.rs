//! Joint optimization: schedule, Adam, checkpoints and the epoch loop.

pub mod checkpoint;
pub mod config;
pub mod engine;
pub mod optim;
pub mod schedule;

pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use engine::{fit, split_dataset, train_epoch, FitReport, LogRow, Splits, TrainState};
pub use optim::{clip_global_norm, Adam, CLIP_NORM};
pub use schedule::lr_schedule;
