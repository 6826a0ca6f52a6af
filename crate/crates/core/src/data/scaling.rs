/// Mean-absolute scale `1 + mean|x|` of a non-empty history.
///
/// Always `>= 1`, so an all-zero history still yields a usable divisor.
pub fn compute_scale(history: &[f64]) -> f64 {
    debug_assert!(!history.is_empty(), "compute_scale on empty history");
    if history.is_empty() {
        return 1.0;
    }
    1.0 + history.iter().map(|v| v.abs()).sum::<f64>() / history.len() as f64
}

pub fn scale_values(values: &[f64], scale: f64) -> Vec<f64> {
    values.iter().map(|v| v / scale).collect()
}

pub fn unscale_values(values: &[f64], scale: f64) -> Vec<f64> {
    values.iter().map(|v| v * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(compute_scale(&[0.0, 0.0, 0.0]), 1.0);
        assert_eq!(compute_scale(&[2.0, 4.0]), 4.0);
        assert_eq!(compute_scale(&[-3.0, 3.0]), 4.0);
    }

    proptest! {
        #[test]
        fn round_trip_within_one_ulp(values in prop::collection::vec(-1e6f64..1e6, 1..64)) {
            let scale = compute_scale(&values);
            prop_assert!(scale >= 1.0);
            let back = unscale_values(&scale_values(&values, scale), scale);
            for (a, b) in values.iter().zip(&back) {
                let ulp = f64::EPSILON * a.abs().max(f64::MIN_POSITIVE);
                prop_assert!((a - b).abs() <= ulp, "{a} vs {b}");
            }
        }
    }
}
