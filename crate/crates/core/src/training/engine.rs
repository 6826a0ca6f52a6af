//! Epoch loop, validation-driven early stopping and run-directory layout.

use std::fs::File;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::optim::{clip_global_norm, Adam, CLIP_NORM};
use super::schedule::lr_schedule;
use crate::autograd::Scalar;
use crate::data::{make_windows, TimeSeriesDataset, WindowBatch, WindowMode};
use crate::error::{Error, Result};
use crate::eval::{evaluate, rolling_forecast, ForecastOptions, QuantileMethod};
use crate::model::PdTrans;
use crate::nn::Mode;

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<F: Scalar> {
    pub epoch: usize,
    pub step: u64,
    pub optimizer: Adam<F>,
    /// Best validation `ρ0.5` so far.
    pub best_val: Option<f64>,
    pub patience_left: usize,
    pub rng: ChaCha8Rng,
}

impl<F: Scalar> TrainState<F> {
    pub fn new(model: &PdTrans<F>, config: &TrainConfig) -> Self {
        let mut optimizer = Adam::new(&model.store);
        optimizer.decay = decay_per_tensor(model, config);
        Self {
            epoch: 0,
            step: 0,
            optimizer,
            best_val: None,
            patience_left: config.patience,
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)),
        }
    }
}

/// `head_weight_decay` for the head's decoder MLPs, zero elsewhere.
pub(crate) fn decay_per_tensor<F: Scalar>(model: &PdTrans<F>, config: &TrainConfig) -> Vec<f64> {
    model
        .store
        .iter()
        .map(|p| {
            let decoder = p.name.starts_with("head.trend.") || p.name.starts_with("head.seasonal.");
            if decoder {
                config.head_weight_decay
            } else {
                0.0
            }
        })
        .collect()
}

/// One line of `train_log.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRow {
    pub epoch: usize,
    pub step: u64,
    pub nll: f64,
    pub kl: f64,
    pub recon: f64,
    pub total: f64,
    pub lr: f64,
}

/// Tail lengths excluded from training and from validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Splits {
    pub train_holdout: usize,
    pub val_holdout: usize,
}

/// Test windows occupy the last `test_windows·τ` steps, validation the
/// `val_windows·τ` before them, training everything earlier.
pub fn split_dataset(dataset: &TimeSeriesDataset, config: &TrainConfig) -> Result<Splits> {
    let m = &config.model;
    let val_holdout = config.test_windows * m.tau;
    let train_holdout = val_holdout + config.val_windows * m.tau;
    let shortest = dataset.min_len();
    if shortest < val_holdout + m.t0 + m.tau {
        return Err(Error::EmptyValidationSplit);
    }
    if shortest < train_holdout + m.t0 + m.tau {
        return Err(Error::WindowTooLong {
            needed: train_holdout + m.t0 + m.tau,
            len: shortest,
        });
    }
    Ok(Splits {
        train_holdout,
        val_holdout,
    })
}

/// Runs `batches_per_epoch` Adam steps on freshly sampled training windows.
pub fn train_epoch<F: Scalar>(
    state: &mut TrainState<F>,
    model: &mut PdTrans<F>,
    dataset: &TimeSeriesDataset,
    config: &TrainConfig,
    splits: Splits,
    log: &mut dyn FnMut(&LogRow) -> Result<()>,
) -> Result<()> {
    let (t0, tau) = (model.config.t0, model.config.tau);
    let lr = lr_schedule(state.epoch, config.base_lr);
    let mode = WindowMode::Train {
        count: config.batch_size,
        holdout: splits.train_holdout,
    };
    for i in 0..config.batches_per_epoch {
        let windows = make_windows(dataset, t0, tau, 1, mode, &mut state.rng)?;
        let batch = WindowBatch::from_windows(&windows)?;
        let mut train_mode = Mode {
            dropout: model.config.dropout,
            rng: Some(&mut state.rng),
        };
        let (loss, mut grads) = model.loss_and_grads(&batch, &mut train_mode, None)?;
        if !loss.total.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { batch: i });
        }
        clip_global_norm(&mut grads, CLIP_NORM);
        state.optimizer.step(&mut model.store, &grads, lr);
        state.step += 1;
        log(&LogRow {
            epoch: state.epoch,
            step: state.step,
            nll: loss.nll,
            kl: loss.kl,
            recon: loss.recon,
            total: loss.total,
            lr,
        })?;
    }
    state.epoch += 1;
    Ok(())
}

/// Validation `ρ0.5` on the windows just before the test split.
pub fn validate<F: Scalar>(
    model: &PdTrans<F>,
    dataset: &TimeSeriesDataset,
    config: &TrainConfig,
    splits: Splits,
    epoch: usize,
) -> Result<f64> {
    let options = ForecastOptions {
        n_samples: config.n_samples_val,
        n_latent: 1,
        method: QuantileMethod::Empirical,
        max_windows: Some(config.val_windows),
        holdout: splits.val_holdout,
        seed: config.seed.wrapping_add(1000 + epoch as u64),
        chunk: 32,
    };
    let result = rolling_forecast(model, dataset, &options)?;
    if result.windows.is_empty() {
        return Err(Error::EmptyValidationSplit);
    }
    Ok(evaluate(&result)?.rho_50)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub run_dir: PathBuf,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub log: PathBuf,
    pub epochs: usize,
    pub steps: u64,
    pub best_val: Option<f64>,
    pub stopped_early: bool,
}

/// Config with `n_series` widened to cover every id in `dataset`.
pub fn resolve_config(config: &TrainConfig, dataset: &TimeSeriesDataset) -> TrainConfig {
    let mut resolved = config.clone();
    resolved.model.n_series = resolved.model.n_series.max(dataset.id_span());
    resolved
}

/// Trains until `max_epochs` or until validation `ρ0.5` has not improved for
/// `patience` epochs, writing checkpoints and the step log into `run_dir`.
pub fn fit(config: &TrainConfig, dataset: &TimeSeriesDataset, run_dir: &Path) -> Result<FitReport> {
    let config = resolve_config(config, dataset);
    config.validate()?;
    let splits = split_dataset(dataset, &config)?;
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut model = PdTrans::<f32>::new(config.model.clone(), config.seed)?;
    let mut state = TrainState::new(&model, &config);

    let log_path = run_dir.join(TRAIN_LOG);
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    let best_path = run_dir.join(BEST_CHECKPOINT);
    let last_path = run_dir.join(LAST_CHECKPOINT);
    let mut stopped_early = false;

    while state.epoch < config.max_epochs {
        train_epoch(&mut state, &mut model, dataset, &config, splits, &mut |row| {
            Ok(writer.serialize(row)?)
        })?;
        writer.flush().map_err(|e| Error::io(&log_path, e))?;
        let val = validate(&model, dataset, &config, splits, state.epoch)?;
        if val.is_finite() && state.best_val.is_none_or(|best| val < best) {
            state.best_val = Some(val);
            state.patience_left = config.patience;
            Checkpoint::new(&config, &model, Some(&state)).save(&best_path)?;
        } else {
            state.patience_left = state.patience_left.saturating_sub(1);
        }
        Checkpoint::new(&config, &model, Some(&state)).save(&last_path)?;
        if state.patience_left == 0 {
            stopped_early = state.epoch < config.max_epochs;
            break;
        }
    }
    if !best_path.exists() {
        Checkpoint::new(&config, &model, Some(&state)).save(&best_path)?;
    }
    Ok(FitReport {
        run_dir: run_dir.to_path_buf(),
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        log: log_path,
        epochs: state.epoch,
        steps: state.step,
        best_val: state.best_val,
        stopped_early,
    })
}
