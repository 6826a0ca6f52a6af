use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::forecast::{ForecastResult, WindowForecast, QUANTILE_LEVELS};
use crate::data::{make_windows, TimeSeriesDataset, WindowMode};
use crate::error::{Error, Result};

/// Repeats the last observed period: `ŷ_{t0+i} = y_{t0-period+(i mod period)}`.
pub fn seasonal_naive_forecast(history: &[f64], tau: usize, period: usize) -> Result<Vec<f64>> {
    if period == 0 || history.len() < period {
        return Err(Error::HistoryTooShort {
            len: history.len(),
            period,
        });
    }
    let base = history.len() - period;
    Ok((0..tau).map(|i| history[base + i % period]).collect())
}

/// Seasonal-naive point forecasts on the same rolling windows the model is
/// scored on. Every quantile curve equals the point forecast.
pub fn baseline_seasonal_naive(
    dataset: &TimeSeriesDataset,
    t0: usize,
    tau: usize,
    period: usize,
    max_windows: Option<usize>,
    holdout: usize,
) -> Result<ForecastResult> {
    if t0 < period {
        return Err(Error::HistoryTooShort { len: t0, period });
    }
    let mode = WindowMode::Eval { max_windows, holdout };
    let windows = make_windows(dataset, t0, tau, tau, mode, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut out = Vec::with_capacity(windows.len());
    for w in windows {
        let history: Vec<f64> = w.history.iter().map(|v| v * w.scale).collect();
        let point = seasonal_naive_forecast(&history, tau, period)?;
        out.push(WindowForecast {
            series_id: w.series_id,
            window: w.index,
            first_step: w.start + t0,
            scale: w.scale,
            draws: 1,
            samples: point.clone(),
            quantiles: vec![point.clone(); QUANTILE_LEVELS.len()],
            trend: vec![0.0; tau],
            seasonal: point.clone(),
            mu_hat: point,
            sigma: vec![0.0; tau],
            truth: Some(w.unscaled_target()),
        });
    }
    Ok(ForecastResult { tau, windows: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};
    use crate::eval::metrics::evaluate;

    #[test]
    fn repeats_last_period() {
        assert_eq!(
            seasonal_naive_forecast(&[1.0, 2.0, 3.0, 4.0], 5, 2).unwrap(),
            vec![3.0, 4.0, 3.0, 4.0, 3.0]
        );
        assert!(matches!(
            seasonal_naive_forecast(&[1.0], 2, 3),
            Err(Error::HistoryTooShort { len: 1, period: 3 })
        ));
    }

    #[test]
    fn periodic_and_constant_series_score_zero() {
        for (slope, amplitude) in [(0.0, 1.0), (0.0, 0.0)] {
            let spec = SyntheticSpec {
                n_series: 2,
                length: 240,
                slope,
                amplitude,
                noise_std: 0.0,
                ..SyntheticSpec::default()
            };
            let (mut ds, _) = gen_synthetic(&spec).unwrap();
            if amplitude == 0.0 {
                let series = ds.series().iter().cloned().map(|mut s| {
                    s.values.iter_mut().for_each(|v| *v = 5.0);
                    s
                });
                ds = TimeSeriesDataset::new(series.collect(), ds.frequency()).unwrap();
            }
            let result = baseline_seasonal_naive(&ds, 48, 24, 24, Some(3), 0).unwrap();
            let m = evaluate(&result).unwrap();
            assert!(m.rho_50.abs() < 1e-9, "{m:?}");
        }
    }
}
