use chrono::{Datelike, NaiveDateTime, Timelike};

use super::dataset::{Frequency, TimeSeriesDataset};
use crate::error::{Error, Result};

/// Number of covariates produced per step, for either frequency.
pub const N_COVARIATES: usize = 3;

/// Maps `value` in `[lo, hi]` linearly onto `[-0.5, 0.5]`.
fn centered_unit(value: u32, lo: u32, hi: u32) -> f64 {
    (value - lo) as f64 / (hi - lo) as f64 - 0.5
}

/// Calendar encodings of a single timestamp, each in `[-0.5, 0.5]`.
pub fn calendar_features(ts: &NaiveDateTime, frequency: Frequency) -> [f64; 2] {
    match frequency {
        Frequency::Hourly => [
            centered_unit(ts.hour(), 0, 23),
            centered_unit(ts.weekday().num_days_from_monday(), 0, 6),
        ],
        Frequency::Daily => [centered_unit(ts.day(), 1, 31), centered_unit(ts.month(), 1, 12)],
    }
}

/// Relative position of step `t` in a series of `len` steps, in `[0, 1]`.
pub fn age(t: usize, len: usize) -> f64 {
    if len <= 1 {
        0.0
    } else {
        t as f64 / (len - 1) as f64
    }
}

/// Covariate vector for step `t` of the series with id `series_id`:
/// two calendar encodings followed by the age feature.
pub fn featurize_covariates(dataset: &TimeSeriesDataset, series_id: i64, t: usize) -> Result<[f64; N_COVARIATES]> {
    let series = dataset.find(series_id).ok_or(Error::UnknownSeries {
        id: series_id,
        n_series: dataset.n_series(),
    })?;
    if t >= series.len() {
        return Err(Error::IndexOutOfRange {
            index: t,
            len: series.len(),
        });
    }
    let [a, b] = calendar_features(&series.timestamps[t], dataset.frequency());
    Ok([a, b, age(t, series.len())])
}
