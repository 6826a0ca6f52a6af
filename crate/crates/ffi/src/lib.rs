//! C ABI over the forecasting toolkit.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Every fallible call returns a [`PdtStatus`];
//! on failure [`pdt_last_error`] describes what went wrong on the calling
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pdtrans::data::windows::window_at;
use pdtrans::data::{gen_synthetic, load_csv, CsvSchema, SyntheticSpec, TimeSeriesDataset, WindowBatch};
use pdtrans::eval::forecast::empirical_quantiles;
use pdtrans::eval::{evaluate, quantile_loss, rolling_forecast, ForecastOptions};
use pdtrans::objectives::gaussian_nll;
use pdtrans::training::{fit, lr_schedule, Checkpoint, TrainConfig};
use pdtrans::{Error, PdTrans};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    /// Dataset content violates an invariant (gaps, duplicates, bad values).
    Data = 5,
    Shape = 6,
    /// Non-finite values or non-positive scale parameters.
    Numeric = 7,
    Checkpoint = 8,
    Panic = 9,
}

/// A trained model loaded from a checkpoint.
pub struct PdtModel {
    model: PdTrans<f32>,
    config: TrainConfig,
}

/// An immutable collection of series.
pub struct PdtDataset {
    inner: TimeSeriesDataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(PdtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => PdtStatus::Io,
            Error::Csv(_) | Error::Json(_) | Error::InvalidRecord { .. } | Error::MissingColumn(_) => PdtStatus::Parse,
            Error::NonMonotoneTimestamps { .. }
            | Error::GapInSeries { .. }
            | Error::DuplicateSeries(_)
            | Error::WindowTooLong { .. }
            | Error::HistoryTooShort { .. }
            | Error::UnknownSeries { .. }
            | Error::EmptyValidationSplit
            | Error::MissingGroundTruth
            | Error::IndexOutOfRange { .. } => PdtStatus::Data,
            Error::ShapeMismatch(_) | Error::AllMaskedRow { .. } => PdtStatus::Shape,
            Error::NonFinite(_) | Error::NonPositiveSigma(_) | Error::NonFiniteLoss { .. } | Error::ZeroDenominator => {
                PdtStatus::Numeric
            }
            Error::Checkpoint(_) => PdtStatus::Checkpoint,
            Error::InvalidSpec(_)
            | Error::InvalidConfig(_)
            | Error::EvenKernel(_)
            | Error::KernelTooLarge { .. }
            | Error::NonPositiveCoefficient { .. } => PdtStatus::InvalidArgument,
        };
        Failure(status, format!("{}: {e}", e.kind()))
    }
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> PdtStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            PdtStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PdtStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(PdtStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(PdtStatus::InvalidArgument, message.into())
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message for the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn pdt_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn pdt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a long-format CSV (`timestamp,series_id,value`).
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdt_dataset_load_csv(path: *const c_char, out: *mut *mut PdtDataset) -> PdtStatus {
    guard(|| {
        let path = text(path, "path")?;
        let inner = load_csv(Path::new(path), &CsvSchema::default())?;
        write_out(out, Box::into_raw(Box::new(PdtDataset { inner })), "out")
    })
}

/// Generates a synthetic dataset from a JSON spec; null uses the defaults.
///
/// # Safety
/// `spec_json` must be null or a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdt_dataset_synthetic(spec_json: *const c_char, out: *mut *mut PdtDataset) -> PdtStatus {
    guard(|| {
        let spec = if spec_json.is_null() {
            SyntheticSpec::default()
        } else {
            serde_json::from_str(text(spec_json, "spec_json")?).map_err(Error::from)?
        };
        let (inner, _) = gen_synthetic(&spec)?;
        write_out(out, Box::into_raw(Box::new(PdtDataset { inner })), "out")
    })
}

/// Writes the dataset as long-format CSV.
///
/// # Safety
/// `dataset` must come from this library; `path` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn pdt_dataset_write_csv(dataset: *const PdtDataset, path: *const c_char) -> PdtStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        ds.inner.write_csv(Path::new(text(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdt_dataset_n_series(dataset: *const PdtDataset, out: *mut usize) -> PdtStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        write_out(out, ds.inner.n_series(), "out")
    })
}

/// Length and id of the series at `index`.
///
/// # Safety
/// `dataset` must come from this library; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn pdt_dataset_series_info(
    dataset: *const PdtDataset,
    index: usize,
    out_len: *mut usize,
    out_id: *mut i64,
) -> PdtStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let s = ds.inner.series().get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: ds.inner.n_series(),
        })?;
        if !out_len.is_null() {
            out_len.write(s.len());
        }
        if !out_id.is_null() {
            out_id.write(s.id);
        }
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn pdt_dataset_free(dataset: *mut PdtDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Loads a checkpoint written by training.
///
/// # Safety
/// `path` must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdt_model_load(path: *const c_char, out: *mut *mut PdtModel) -> PdtStatus {
    guard(|| {
        let ckpt = Checkpoint::load(Path::new(text(path, "path")?))?;
        let model = ckpt.model::<f32>()?;
        write_out(
            out,
            Box::into_raw(Box::new(PdtModel {
                model,
                config: ckpt.config,
            })),
            "out",
        )
    })
}

/// # Safety
/// `model` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn pdt_model_free(model: *mut PdtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Conditioning length `t0` and horizon `tau` of the model.
///
/// # Safety
/// `model` must come from this library; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn pdt_model_dims(model: *const PdtModel, out_t0: *mut usize, out_tau: *mut usize) -> PdtStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if !out_t0.is_null() {
            out_t0.write(m.model.config.t0);
        }
        if !out_tau.is_null() {
            out_tau.write(m.model.config.tau);
        }
        Ok(())
    })
}

/// Forecasts the `tau` steps following `t0` observations that start at
/// `start` in series `series_index`. Each output array has `tau` entries and
/// may be null when not wanted. Values are in the data domain.
///
/// # Safety
/// Handles must come from this library; non-null outputs must hold `tau` doubles.
#[no_mangle]
pub unsafe extern "C" fn pdt_model_forecast_window(
    model: *const PdtModel,
    dataset: *const PdtDataset,
    series_index: usize,
    start: usize,
    n_samples: usize,
    seed: u64,
    out_q10: *mut f64,
    out_q50: *mut f64,
    out_q90: *mut f64,
    out_mu_hat: *mut f64,
    out_sigma: *mut f64,
    out_trend: *mut f64,
    out_seasonal: *mut f64,
) -> PdtStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        if n_samples == 0 {
            return Err(invalid("n_samples must be at least 1"));
        }
        let (t0, tau) = (m.model.config.t0, m.model.config.tau);
        let window = window_at(&ds.inner, series_index, start, t0, tau)?;
        let batch = WindowBatch::from_windows(std::slice::from_ref(&window))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fc = m.model.forecast(&batch, n_samples, m.config.n_latent_infer, &mut rng)?;
        let scale = window.scale;
        let unscale = |v: &[f32]| -> Vec<f64> { v.iter().map(|&x| x as f64 * scale).collect() };
        let samples = unscale(&fc.samples);
        let q = empirical_quantiles(&samples, tau);
        let outputs: [(*mut f64, Vec<f64>); 7] = [
            (out_q10, q[0].clone()),
            (out_q50, q[4].clone()),
            (out_q90, q[8].clone()),
            (out_mu_hat, unscale(&fc.mu_hat)),
            (out_sigma, unscale(&fc.sigma)),
            (out_trend, unscale(&fc.trend)),
            (out_seasonal, unscale(&fc.seasonal)),
        ];
        for (dst, values) in outputs {
            if !dst.is_null() {
                ptr::copy_nonoverlapping(values.as_ptr(), dst, tau);
            }
        }
        Ok(())
    })
}

/// Rolling evaluation over the last `n_windows` windows of every series.
///
/// # Safety
/// Handles must come from this library; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn pdt_model_evaluate(
    model: *const PdtModel,
    dataset: *const PdtDataset,
    n_samples: usize,
    n_windows: usize,
    seed: u64,
    out_rho50: *mut f64,
    out_rho90: *mut f64,
) -> PdtStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        if n_samples == 0 || n_windows == 0 {
            return Err(invalid("n_samples and n_windows must be at least 1"));
        }
        let options = ForecastOptions {
            n_samples,
            n_latent: m.config.n_latent_infer,
            max_windows: Some(n_windows),
            seed,
            ..ForecastOptions::default()
        };
        let metrics = evaluate(&rolling_forecast(&m.model, &ds.inner, &options)?)?;
        if !out_rho50.is_null() {
            out_rho50.write(metrics.rho_50);
        }
        if !out_rho90.is_null() {
            out_rho90.write(metrics.rho_90);
        }
        Ok(())
    })
}

/// Trains with a JSON config (null for defaults), writing checkpoints and
/// the step log into `run_dir`.
///
/// # Safety
/// `config_json` must be null or nul-terminated; `dataset` must come from this
/// library; `run_dir` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn pdt_train(
    config_json: *const c_char,
    dataset: *const PdtDataset,
    run_dir: *const c_char,
    out_best_val: *mut f64,
) -> PdtStatus {
    guard(|| {
        let config = if config_json.is_null() {
            TrainConfig::default()
        } else {
            TrainConfig::from_json(text(config_json, "config_json")?)?
        };
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let report = fit(&config, &ds.inner, Path::new(text(run_dir, "run_dir")?))?;
        if !out_best_val.is_null() {
            out_best_val.write(report.best_val.unwrap_or(f64::NAN));
        }
        Ok(())
    })
}

/// `ρ`-quantile loss `2·ΣP_ρ(y, ŷ) / Σ|y|`.
///
/// # Safety
/// `y` and `y_hat` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdt_quantile_loss(
    y: *const f64,
    y_hat: *const f64,
    len: usize,
    rho: f64,
    out: *mut f64,
) -> PdtStatus {
    guard(|| {
        let v = quantile_loss(slice(y, len, "y")?, slice(y_hat, len, "y_hat")?, rho)?;
        write_out(out, v, "out")
    })
}

/// Mean Gaussian negative log-likelihood including `½ln(2π)`.
///
/// # Safety
/// The three arrays must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdt_gaussian_nll(
    y: *const f64,
    mu: *const f64,
    sigma: *const f64,
    len: usize,
    out: *mut f64,
) -> PdtStatus {
    guard(|| {
        let v = gaussian_nll(slice(y, len, "y")?, slice(mu, len, "mu")?, slice(sigma, len, "sigma")?)?;
        write_out(out, v, "out")
    })
}

/// Learning rate at `epoch`: `base_lr · 0.8^⌊epoch/2⌋`.
#[no_mangle]
pub extern "C" fn pdt_lr_schedule(epoch: usize, base_lr: f64) -> f64 {
    lr_schedule(epoch, base_lr)
}
