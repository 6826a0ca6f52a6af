use std::path::Path;

use super::forecast::ForecastResult;
use super::metrics::Metrics;
use crate::error::{Error, Result};

pub const FORECAST_HEADER: [&str; 8] = ["series_id", "window", "step", "q10", "q50", "q90", "mean", "sigma"];
pub const DECOMPOSITION_HEADER: [&str; 6] = ["series_id", "step", "mu_hat", "mu_trend", "mu_seasonal", "sigma"];

/// One row per forecast step; `step` is the index within the series.
pub fn write_forecast_csv(path: &Path, result: &ForecastResult) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(FORECAST_HEADER)?;
    for f in &result.windows {
        let (q10, q50, q90) = (f.quantile(0.1)?, f.quantile(0.5)?, f.quantile(0.9)?);
        for i in 0..result.tau {
            let mean = (0..f.draws).map(|d| f.samples[d * result.tau + i]).sum::<f64>() / f.draws as f64;
            w.write_record([
                f.series_id.to_string(),
                f.window.to_string(),
                (f.first_step + i).to_string(),
                q10[i].to_string(),
                q50[i].to_string(),
                q90[i].to_string(),
                mean.to_string(),
                f.sigma[i].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean decomposition trace per forecast step.
pub fn write_decomposition_csv(path: &Path, result: &ForecastResult) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(DECOMPOSITION_HEADER)?;
    for f in &result.windows {
        for i in 0..result.tau {
            w.write_record([
                f.series_id.to_string(),
                (f.first_step + i).to_string(),
                f.mu_hat[i].to_string(),
                f.trend[i].to_string(),
                f.seasonal[i].to_string(),
                f.sigma[i].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Metrics rounded to three decimals.
pub fn write_metrics_json(path: &Path, metrics: &Metrics) -> Result<()> {
    let text = serde_json::to_string_pretty(&metrics.rounded())?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
