use serde::{Deserialize, Serialize};

use super::forecast::ForecastResult;
use crate::error::{Error, Result};

/// Pinball loss: `ρ(y-ŷ)` when `y > ŷ`, else `(1-ρ)(ŷ-y)`.
pub fn pinball(y: f64, y_hat: f64, rho: f64) -> f64 {
    if y > y_hat {
        rho * (y - y_hat)
    } else {
        (1.0 - rho) * (y_hat - y)
    }
}

/// `Q_ρ = 2·Σ P_ρ(y, ŷ) / Σ|y|`.
pub fn quantile_loss(y: &[f64], y_hat: &[f64], rho: f64) -> Result<f64> {
    let mut acc = QuantileAccumulator::default();
    acc.add(y, y_hat, rho)?;
    acc.value()
}

/// Running numerator and denominator of `Q_ρ`, summed across windows before
/// the single division.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QuantileAccumulator {
    pub numerator: f64,
    pub denominator: f64,
}

impl QuantileAccumulator {
    pub fn add(&mut self, y: &[f64], y_hat: &[f64], rho: f64) -> Result<()> {
        if y.len() != y_hat.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} targets vs {} forecasts",
                y.len(),
                y_hat.len()
            )));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidConfig(format!("quantile level {rho} outside (0, 1)")));
        }
        self.numerator += 2.0 * y.iter().zip(y_hat).map(|(&a, &b)| pinball(a, b, rho)).sum::<f64>();
        self.denominator += y.iter().map(|v| v.abs()).sum::<f64>();
        Ok(())
    }

    pub fn value(&self) -> Result<f64> {
        if self.denominator <= 0.0 {
            return Err(Error::ZeroDenominator);
        }
        Ok(self.numerator / self.denominator)
    }
}

/// Headline metrics of a forecast run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "rho_0.5")]
    pub rho_50: f64,
    #[serde(rename = "rho_0.9")]
    pub rho_90: f64,
    pub n_windows: usize,
    pub n_series: usize,
}

impl Metrics {
    /// Values rounded to three decimals for reporting.
    pub fn rounded(&self) -> Self {
        let r = |v: f64| (v * 1000.0).round() / 1000.0;
        Self {
            rho_50: r(self.rho_50),
            rho_90: r(self.rho_90),
            ..*self
        }
    }
}

/// `ρ0.5` and `ρ0.9` aggregated over every series and window.
pub fn evaluate(result: &ForecastResult) -> Result<Metrics> {
    let mut q50 = QuantileAccumulator::default();
    let mut q90 = QuantileAccumulator::default();
    for w in &result.windows {
        let truth = w.truth.as_deref().ok_or(Error::MissingGroundTruth)?;
        q50.add(truth, w.quantile(0.5)?, 0.5)?;
        q90.add(truth, w.quantile(0.9)?, 0.9)?;
    }
    if result.windows.is_empty() {
        return Err(Error::MissingGroundTruth);
    }
    Ok(Metrics {
        rho_50: q50.value()?,
        rho_90: q90.value()?,
        n_windows: result.windows.len(),
        n_series: result.n_series(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        assert_eq!(quantile_loss(&[1.0, 2.0], &[1.0, 2.0], 0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(
            quantile_loss(&[2.0, 2.0], &[1.0, 3.0], 0.5).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(quantile_loss(&[10.0], &[8.0], 0.9).unwrap(), 0.36, epsilon = 1e-12);
        assert!(matches!(
            quantile_loss(&[0.0, 0.0], &[1.0, 1.0], 0.5),
            Err(Error::ZeroDenominator)
        ));
    }

    #[test]
    fn metrics_json_keys() {
        let m = Metrics {
            rho_50: 0.12345,
            rho_90: 0.06789,
            n_windows: 7,
            n_series: 2,
        }
        .rounded();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"rho_0.5":0.123,"rho_0.9":0.068,"n_windows":7,"n_series":2}"#);
    }

    fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..30).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.1f64..100.0, n),
                proptest::collection::vec(-100.0f64..100.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn non_negative_and_median_is_normalized_abs_error((y, y_hat) in pairs(), rho in 0.01f64..0.99) {
            prop_assert!(quantile_loss(&y, &y_hat, rho).unwrap() >= 0.0);
            let mae: f64 = y.iter().zip(&y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.iter().map(|v| v.abs()).sum::<f64>();
            prop_assert!((quantile_loss(&y, &y_hat, 0.5).unwrap() - mae).abs() <= 1e-9 * mae.max(1.0));
        }

        #[test]
        fn scale_invariant((y, y_hat) in pairs(), c in 0.01f64..100.0, rho in 0.01f64..0.99) {
            let a = quantile_loss(&y, &y_hat, rho).unwrap();
            let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
            let hs: Vec<f64> = y_hat.iter().map(|v| v * c).collect();
            prop_assert!((quantile_loss(&ys, &hs, rho).unwrap() - a).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn duplication_invariant((y, y_hat) in pairs()) {
            let mut acc = QuantileAccumulator::default();
            acc.add(&y, &y_hat, 0.9).unwrap();
            acc.add(&y, &y_hat, 0.9).unwrap();
            let single = quantile_loss(&y, &y_hat, 0.9).unwrap();
            prop_assert!((acc.value().unwrap() - single).abs() <= 1e-12 * single.max(1.0));
        }
    }
}
