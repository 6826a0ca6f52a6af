use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::autograd::Scalar;
use crate::data::{make_windows, TimeSeriesDataset, WindowBatch, WindowMode};
use crate::error::{Error, Result};
use crate::model::PdTrans;

/// Quantile levels reported for every forecast.
pub const QUANTILE_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantileMethod {
    /// Order statistics of the pooled predictive samples.
    #[default]
    Empirical,
    /// `μ̂ + σ·Φ⁻¹(ρ)` from the per-window mean trace.
    Analytic,
}

/// One forecast window, data domain.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowForecast {
    pub series_id: i64,
    /// Position among the evaluated windows of this series.
    pub window: usize,
    /// Series index of the first forecast step.
    pub first_step: usize,
    pub scale: f64,
    pub draws: usize,
    /// `[draws, τ]`
    pub samples: Vec<f64>,
    /// One curve per entry of [`QUANTILE_LEVELS`].
    pub quantiles: Vec<Vec<f64>>,
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub mu_hat: Vec<f64>,
    pub sigma: Vec<f64>,
    pub truth: Option<Vec<f64>>,
}

impl WindowForecast {
    pub fn quantile(&self, rho: f64) -> Result<&[f64]> {
        QUANTILE_LEVELS
            .iter()
            .position(|&q| (q - rho).abs() < 1e-9)
            .map(|i| self.quantiles[i].as_slice())
            .ok_or_else(|| Error::InvalidConfig(format!("quantile {rho} not computed")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub tau: usize,
    pub windows: Vec<WindowForecast>,
}

impl ForecastResult {
    pub fn n_series(&self) -> usize {
        self.windows.iter().map(|w| w.series_id).collect::<BTreeSet<_>>().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastOptions {
    pub n_samples: usize,
    pub n_latent: usize,
    pub method: QuantileMethod,
    /// Latest windows kept per series; `None` keeps all that fit.
    pub max_windows: Option<usize>,
    /// Tail steps of every series left out.
    pub holdout: usize,
    pub seed: u64,
    /// Windows decoded together.
    pub chunk: usize,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        Self {
            n_samples: 100,
            n_latent: 1,
            method: QuantileMethod::Empirical,
            max_windows: Some(7),
            holdout: 0,
            seed: 0,
            chunk: 16,
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn sorted_quantile(sorted: &[f64], rho: f64) -> f64 {
    let pos = rho * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantile curves of `samples` (`[draws, τ]`) at every [`QUANTILE_LEVELS`] entry.
pub fn empirical_quantiles(samples: &[f64], tau: usize) -> Vec<Vec<f64>> {
    let draws = samples.len() / tau;
    let mut curves = vec![vec![0.0; tau]; QUANTILE_LEVELS.len()];
    let mut column = Vec::with_capacity(draws);
    for t in 0..tau {
        column.clear();
        column.extend((0..draws).map(|d| samples[d * tau + t]));
        column.sort_by(f64::total_cmp);
        for (curve, &rho) in curves.iter_mut().zip(&QUANTILE_LEVELS) {
            curve[t] = sorted_quantile(&column, rho);
        }
    }
    curves
}

pub fn analytic_quantiles(mean: &[f64], sigma: &[f64]) -> Vec<Vec<f64>> {
    let normal = Normal::standard();
    QUANTILE_LEVELS
        .iter()
        .map(|&rho| {
            let z = normal.inverse_cdf(rho);
            mean.iter().zip(sigma).map(|(m, s)| m + s * z).collect()
        })
        .collect()
}

/// Rolling non-overlapping windows (stride τ) at the end of every series,
/// forecast with sampled paths and unscaled to the data domain.
pub fn rolling_forecast<F: Scalar>(
    model: &PdTrans<F>,
    dataset: &TimeSeriesDataset,
    options: &ForecastOptions,
) -> Result<ForecastResult> {
    let (t0, tau) = (model.config.t0, model.config.tau);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mode = WindowMode::Eval {
        max_windows: options.max_windows,
        holdout: options.holdout,
    };
    let windows = make_windows(dataset, t0, tau, tau, mode, &mut rng)?;
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(options.chunk.max(1)) {
        let batch = WindowBatch::from_windows(chunk)?;
        let fc = model.forecast(&batch, options.n_samples, options.n_latent, &mut rng)?;
        let per = fc.draws * tau;
        for (b, w) in chunk.iter().enumerate() {
            let s = w.scale;
            let unscale = |v: &[F]| -> Vec<f64> { v.iter().map(|x| x.as_f64() * s).collect() };
            let row = b * tau..(b + 1) * tau;
            let samples = unscale(&fc.samples[b * per..(b + 1) * per]);
            let mu_hat = unscale(&fc.mu_hat[row.clone()]);
            let sigma = unscale(&fc.sigma[row.clone()]);
            let quantiles = match options.method {
                QuantileMethod::Empirical => empirical_quantiles(&samples, tau),
                QuantileMethod::Analytic => analytic_quantiles(&mu_hat, &sigma),
            };
            out.push(WindowForecast {
                series_id: w.series_id,
                window: w.index,
                first_step: w.start + t0,
                scale: s,
                draws: fc.draws,
                samples,
                quantiles,
                trend: unscale(&fc.trend[row.clone()]),
                seasonal: unscale(&fc.seasonal[row]),
                mu_hat,
                sigma,
                truth: Some(w.unscaled_target()),
            });
        }
    }
    Ok(ForecastResult { tau, windows: out })
}
