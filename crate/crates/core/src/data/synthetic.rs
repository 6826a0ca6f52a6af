use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{format_timestamp, Frequency, Series, TimeSeriesDataset};
use crate::error::{Error, Result};

/// Parameters of `y_t = slope·t + amplitude·sin(2πt/period) + ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_series: usize,
    pub length: usize,
    pub slope: f64,
    pub amplitude: f64,
    pub period: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_series: 20,
            length: 960,
            slope: 0.01,
            amplitude: 1.0,
            period: 24,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_series == 0 {
            return Err(Error::InvalidSpec("n_series must be positive".into()));
        }
        if self.period < 2 {
            return Err(Error::InvalidSpec(format!("period {} < 2", self.period)));
        }
        if self.length < 2 * self.period {
            return Err(Error::InvalidSpec(format!(
                "length {} shorter than two periods of {}",
                self.length, self.period
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "noise_std {} must be finite and >= 0",
                self.noise_std
            )));
        }
        if !self.slope.is_finite() || !self.amplitude.is_finite() {
            return Err(Error::InvalidSpec("slope and amplitude must be finite".into()));
        }
        Ok(())
    }
}

/// Per-series ground-truth components; `values = trend + seasonal + noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub series_id: i64,
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub noise: Vec<f64>,
}

/// Generates hourly series starting 2020-01-01T00:00:00. Every series shares
/// trend and seasonality and differs only in its noise draw.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(TimeSeriesDataset, Vec<GroundTruth>)> {
    spec.validate()?;
    let start = NaiveDate::from_ymd_opt(2020, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid start date");
    let timestamps: Vec<_> = (0..spec.length)
        .map(|t| start + Frequency::Hourly.step() * t as i32)
        .collect();
    let trend: Vec<f64> = (0..spec.length).map(|t| spec.slope * t as f64).collect();
    let seasonal: Vec<f64> = (0..spec.length)
        .map(|t| spec.amplitude * (2.0 * PI * t as f64 / spec.period as f64).sin())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut series = Vec::with_capacity(spec.n_series);
    let mut truth = Vec::with_capacity(spec.n_series);
    for id in 0..spec.n_series as i64 {
        let noise: Vec<f64> = (0..spec.length)
            .map(|_| spec.noise_std * normal.sample(&mut rng))
            .collect();
        let values = (0..spec.length).map(|t| trend[t] + seasonal[t] + noise[t]).collect();
        series.push(Series {
            id,
            timestamps: timestamps.clone(),
            values,
        });
        truth.push(GroundTruth {
            series_id: id,
            trend: trend.clone(),
            seasonal: seasonal.clone(),
            noise,
        });
    }
    Ok((TimeSeriesDataset::new(series, Frequency::Hourly)?, truth))
}

/// Writes `timestamp,series_id,step,trend,seasonal,noise`.
pub fn write_ground_truth(path: &Path, dataset: &TimeSeriesDataset, truth: &[GroundTruth]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["timestamp", "series_id", "step", "trend", "seasonal", "noise"])?;
    for (series, gt) in dataset.series().iter().zip(truth) {
        for t in 0..series.len() {
            w.write_record([
                format_timestamp(&series.timestamps[t]),
                gt.series_id.to_string(),
                t.to_string(),
                gt.trend[t].to_string(),
                gt.seasonal[t].to_string(),
                gt.noise[t].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_spec(path: &Path, spec: &SyntheticSpec) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut file, spec)?;
    file.write_all(b"\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            n_series: 2,
            length: 96,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn all_zero_components() {
        let s = SyntheticSpec {
            slope: 0.0,
            amplitude: 0.0,
            noise_std: 0.0,
            ..spec()
        };
        let (ds, truth) = gen_synthetic(&s).unwrap();
        assert!(ds.series().iter().all(|s| s.values.iter().all(|&v| v == 0.0)));
        assert!(truth
            .iter()
            .all(|g| g.trend.iter().chain(&g.seasonal).all(|&v| v == 0.0)));
    }

    #[test]
    fn pure_sinusoid_has_zero_mean_and_unit_peak() {
        let s = SyntheticSpec {
            slope: 0.0,
            amplitude: 1.0,
            noise_std: 0.0,
            period: 24,
            ..spec()
        };
        let (_, truth) = gen_synthetic(&s).unwrap();
        let period = &truth[0].seasonal[..24];
        let mean = period.iter().sum::<f64>() / 24.0;
        let max = period.iter().cloned().fold(f64::MIN, f64::max);
        assert!(mean.abs() < 1e-12);
        assert!((max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decomposition_identity_is_exact() {
        let (ds, truth) = gen_synthetic(&spec()).unwrap();
        for (s, g) in ds.series().iter().zip(&truth) {
            for t in 0..s.len() {
                assert_eq!(s.values[t], g.trend[t] + g.seasonal[t] + g.noise[t]);
            }
        }
    }

    #[test]
    fn seeded_determinism() {
        let a = gen_synthetic(&spec()).unwrap();
        let b = gen_synthetic(&spec()).unwrap();
        assert_eq!(a.0, b.0);
        let c = gen_synthetic(&SyntheticSpec { seed: 1, ..spec() }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn invalid_specs() {
        assert!(gen_synthetic(&SyntheticSpec { period: 1, ..spec() }).is_err());
        assert!(gen_synthetic(&SyntheticSpec {
            length: 47,
            period: 24,
            ..spec()
        })
        .is_err());
        assert!(gen_synthetic(&SyntheticSpec {
            noise_std: -1.0,
            ..spec()
        })
        .is_err());
    }

    #[test]
    fn spec_json_field_names() {
        let json = serde_json::to_value(SyntheticSpec::default()).unwrap();
        let mut keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "amplitude",
                "length",
                "n_series",
                "noise_std",
                "period",
                "seed",
                "slope"
            ]
        );
    }
}
