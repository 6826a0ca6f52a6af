//! Quantile metrics, rolling forecasts, the seasonal-naive yardstick and
//! output writers.

pub mod baseline;
pub mod forecast;
pub mod metrics;
pub mod writers;

pub use baseline::{baseline_seasonal_naive, seasonal_naive_forecast};
pub use forecast::{
    rolling_forecast, ForecastOptions, ForecastResult, QuantileMethod, WindowForecast, QUANTILE_LEVELS,
};
pub use metrics::{evaluate, pinball, quantile_loss, Metrics, QuantileAccumulator};
pub use writers::{write_decomposition_csv, write_forecast_csv, write_metrics_json};
