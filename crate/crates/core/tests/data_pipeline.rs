use pdtrans::data::{gen_synthetic, make_windows, read_csv, CsvSchema, SyntheticSpec, WindowMode};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> SyntheticSpec {
    SyntheticSpec {
        n_series: 3,
        length: 200,
        seed: 9,
        ..SyntheticSpec::default()
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let (ds, _) = gen_synthetic(&small()).unwrap();
    let mut buf = Vec::new();
    ds.write_csv_to(&mut buf).unwrap();
    let back = read_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
    assert_eq!(back.n_series(), 3);
    for (a, b) in ds.series().iter().zip(back.series()) {
        assert_eq!(a.values, b.values);
        assert_eq!(a.timestamps, b.timestamps);
    }
}

#[test]
fn loader_rejects_gaps_duplicates_and_bad_values() {
    let header = "timestamp,series_id,value\n";
    let cases = [
        "2020-01-01 00:00:00,0,1.0\n2020-01-01 01:00:00,0,2.0\n2020-01-01 03:00:00,0,3.0\n",
        "2020-01-01 00:00:00,0,1.0\n2020-01-01 01:00:00,0,2.0\n2020-01-01 01:00:00,0,3.0\n",
        "2020-01-01 00:00:00,0,1.0\n2020-01-01 01:00:00,0,abc\n2020-01-01 02:00:00,0,3.0\n",
        "2020-01-01 00:00:00,0,1.0\n2020-01-01 01:00:00,0,NaN\n2020-01-01 02:00:00,0,3.0\n",
    ];
    for body in cases {
        let text = format!("{header}{body}");
        assert!(read_csv(text.as_bytes(), &CsvSchema::default()).is_err(), "{body}");
    }
}

#[test]
fn synthetic_is_reproducible_and_sums_to_truth() {
    let (a, truth) = gen_synthetic(&small()).unwrap();
    let (b, _) = gen_synthetic(&small()).unwrap();
    assert_eq!(a, b);
    for (s, t) in a.series().iter().zip(&truth) {
        for i in 0..s.values.len() {
            let sum = t.trend[i] + t.seasonal[i] + t.noise[i];
            assert!((s.values[i] - sum).abs() < 1e-12, "component mismatch at {i}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn windows_are_contiguous_and_respect_holdout(
        t0 in 4usize..40, tau in 1usize..20, holdout in 0usize..30, seed in 0u64..1000,
    ) {
        let (ds, _) = gen_synthetic(&small()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let windows = make_windows(&ds, t0, tau, tau, WindowMode::Train { count: 16, holdout }, &mut rng).unwrap();
        prop_assert_eq!(windows.len(), 16);
        for w in &windows {
            let s = ds.find(w.series_id).unwrap();
            prop_assert!(w.start + t0 + tau + holdout <= s.len());
            let unscaled: Vec<f64> = w.history.iter().map(|v| v * w.scale).collect();
            for (i, v) in unscaled.iter().enumerate() {
                prop_assert!((v - s.values[w.start + i]).abs() <= 1e-9 * (1.0 + v.abs()));
            }
            let target = w.unscaled_target();
            for (i, v) in target.iter().enumerate() {
                prop_assert!((v - s.values[w.start + t0 + i]).abs() <= 1e-9 * (1.0 + v.abs()));
            }
        }
    }
}
