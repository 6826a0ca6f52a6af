use rand::Rng;

use super::covariates::{age, calendar_features, N_COVARIATES};
use super::dataset::TimeSeriesDataset;
use super::scaling::compute_scale;
use crate::error::{Error, Result};

/// How windows are drawn from each series. `holdout` steps at the end of
/// every series are never touched, which carves train and validation splits
/// out of one dataset without changing its covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    /// `count` windows with starts drawn uniformly over (series, offset).
    Train { count: usize, holdout: usize },
    /// Rolling windows anchored at `len - holdout`, stepping back by the
    /// stride; `max_windows` keeps only the latest ones.
    Eval { max_windows: Option<usize>, holdout: usize },
}

impl WindowMode {
    pub fn eval() -> Self {
        WindowMode::Eval {
            max_windows: None,
            holdout: 0,
        }
    }

    fn holdout(&self) -> usize {
        match *self {
            WindowMode::Train { holdout, .. } | WindowMode::Eval { holdout, .. } => holdout,
        }
    }
}

/// One conditioning/prediction window, already in the scaled domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub series_id: i64,
    /// Index of the first history step within its series.
    pub start: usize,
    /// Position of this window among the eval windows of its series (0 = earliest).
    pub index: usize,
    pub history: Vec<f64>,
    pub target: Vec<f64>,
    /// Row-major `[t0 + tau, N_COVARIATES]`.
    pub covariates: Vec<f64>,
    pub scale: f64,
}

impl Window {
    pub fn t0(&self) -> usize {
        self.history.len()
    }

    pub fn tau(&self) -> usize {
        self.target.len()
    }

    pub fn unscaled_target(&self) -> Vec<f64> {
        self.target.iter().map(|v| v * self.scale).collect()
    }
}

/// Builds the scaled window of `t0 + tau` steps starting at `start`.
pub fn window_at(
    dataset: &TimeSeriesDataset,
    series_index: usize,
    start: usize,
    t0: usize,
    tau: usize,
) -> Result<Window> {
    let series = dataset.series().get(series_index).ok_or(Error::IndexOutOfRange {
        index: series_index,
        len: dataset.n_series(),
    })?;
    let end = start + t0 + tau;
    if t0 == 0 || tau == 0 || end > series.len() {
        return Err(Error::WindowTooLong {
            needed: end,
            len: series.len(),
        });
    }
    let raw_history = &series.values[start..start + t0];
    let scale = compute_scale(raw_history);
    let mut covariates = Vec::with_capacity((t0 + tau) * N_COVARIATES);
    for t in start..end {
        let [a, b] = calendar_features(&series.timestamps[t], dataset.frequency());
        covariates.extend_from_slice(&[a, b, age(t, series.len())]);
    }
    Ok(Window {
        series_id: series.id,
        start,
        index: 0,
        history: raw_history.iter().map(|v| v / scale).collect(),
        target: series.values[start + t0..end].iter().map(|v| v / scale).collect(),
        covariates,
        scale,
    })
}

/// Cuts a dataset into windows of `t0` history and `tau` targets.
///
/// Train windows draw starts uniformly at random from `rng`; eval windows
/// are deterministic, anchored at each series end and spaced by `stride`.
pub fn make_windows<R: Rng + ?Sized>(
    dataset: &TimeSeriesDataset,
    t0: usize,
    tau: usize,
    stride: usize,
    mode: WindowMode,
    rng: &mut R,
) -> Result<Vec<Window>> {
    let needed = t0 + tau;
    let holdout = mode.holdout();
    let shortest = dataset.min_len();
    if t0 == 0 || tau == 0 || needed + holdout > shortest {
        return Err(Error::WindowTooLong {
            needed: needed + holdout,
            len: shortest,
        });
    }
    if stride == 0 {
        return Err(Error::InvalidConfig("window stride must be positive".into()));
    }
    match mode {
        WindowMode::Train { count, .. } => {
            let offsets: Vec<usize> = dataset
                .series()
                .iter()
                .map(|s| s.len() - holdout - needed + 1)
                .collect();
            let total: usize = offsets.iter().sum();
            let mut windows = Vec::with_capacity(count);
            for _ in 0..count {
                let mut pick = rng.random_range(0..total);
                let mut series_index = 0;
                while pick >= offsets[series_index] {
                    pick -= offsets[series_index];
                    series_index += 1;
                }
                windows.push(window_at(dataset, series_index, pick, t0, tau)?);
            }
            Ok(windows)
        }
        WindowMode::Eval { max_windows, .. } => {
            let mut windows = Vec::new();
            for (series_index, series) in dataset.series().iter().enumerate() {
                let end = series.len() - holdout;
                let available = (end - needed) / stride + 1;
                let count = max_windows.map_or(available, |m| m.min(available));
                for w in 0..count {
                    let start = end - needed - (count - 1 - w) * stride;
                    let mut window = window_at(dataset, series_index, start, t0, tau)?;
                    window.index = w;
                    windows.push(window);
                }
            }
            Ok(windows)
        }
    }
}

/// Windows stacked into dense row-major matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub batch: usize,
    pub t0: usize,
    pub tau: usize,
    /// `[batch, t0]`
    pub history: Vec<f64>,
    /// `[batch, tau]`
    pub target: Vec<f64>,
    /// `[batch, t0 + tau, N_COVARIATES]`
    pub covariates: Vec<f64>,
    pub scale: Vec<f64>,
    pub series_id: Vec<i64>,
}

impl WindowBatch {
    pub fn from_windows(windows: &[Window]) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| Error::ShapeMismatch("empty window batch".into()))?;
        let (t0, tau) = (first.t0(), first.tau());
        let mut batch = WindowBatch {
            batch: windows.len(),
            t0,
            tau,
            history: Vec::with_capacity(windows.len() * t0),
            target: Vec::with_capacity(windows.len() * tau),
            covariates: Vec::with_capacity(windows.len() * (t0 + tau) * N_COVARIATES),
            scale: Vec::with_capacity(windows.len()),
            series_id: Vec::with_capacity(windows.len()),
        };
        for w in windows {
            if w.t0() != t0 || w.tau() != tau || w.covariates.len() != (t0 + tau) * N_COVARIATES {
                return Err(Error::ShapeMismatch("windows of differing lengths".into()));
            }
            batch.history.extend_from_slice(&w.history);
            batch.target.extend_from_slice(&w.target);
            batch.covariates.extend_from_slice(&w.covariates);
            batch.scale.push(w.scale);
            batch.series_id.push(w.series_id);
        }
        Ok(batch)
    }

    pub fn history_row(&self, b: usize) -> &[f64] {
        &self.history[b * self.t0..(b + 1) * self.t0]
    }

    pub fn target_row(&self, b: usize) -> &[f64] {
        &self.target[b * self.tau..(b + 1) * self.tau]
    }

    /// Covariates of window `b` at step `t` (0-based over `t0 + tau`).
    pub fn covariates_at(&self, b: usize, t: usize) -> &[f64] {
        let offset = (b * (self.t0 + self.tau) + t) * N_COVARIATES;
        &self.covariates[offset..offset + N_COVARIATES]
    }

    /// Sub-batch with the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut out = WindowBatch {
            batch: rows.len(),
            t0: self.t0,
            tau: self.tau,
            history: Vec::new(),
            target: Vec::new(),
            covariates: Vec::new(),
            scale: Vec::new(),
            series_id: Vec::new(),
        };
        let cov_width = (self.t0 + self.tau) * N_COVARIATES;
        for &b in rows {
            out.history.extend_from_slice(self.history_row(b));
            out.target.extend_from_slice(self.target_row(b));
            out.covariates
                .extend_from_slice(&self.covariates[b * cov_width..(b + 1) * cov_width]);
            out.scale.push(self.scale[b]);
            out.series_id.push(self.series_id[b]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::{Frequency, Series};
    use chrono::NaiveDate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset(lens: &[usize]) -> TimeSeriesDataset {
        let start = NaiveDate::from_ymd_opt(2021, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let series = lens
            .iter()
            .enumerate()
            .map(|(id, &len)| Series {
                id: id as i64,
                timestamps: (0..len).map(|i| start + chrono::TimeDelta::hours(i as i64)).collect(),
                values: (0..len).map(|i| i as f64).collect(),
            })
            .collect();
        TimeSeriesDataset::new(series, Frequency::Hourly).unwrap()
    }

    fn eval(ds: &TimeSeriesDataset, t0: usize, tau: usize) -> Result<Vec<Window>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        make_windows(ds, t0, tau, tau, WindowMode::eval(), &mut rng)
    }

    #[test]
    fn eval_window_counts() {
        assert_eq!(eval(&dataset(&[168]), 144, 24).unwrap().len(), 1);
        assert_eq!(eval(&dataset(&[336]), 168, 24).unwrap().len(), 7);
        assert!(matches!(
            eval(&dataset(&[100]), 90, 24),
            Err(Error::WindowTooLong { .. })
        ));
    }

    #[test]
    fn eval_windows_tile_the_tail() {
        let ds = dataset(&[400]);
        let windows = eval(&ds, 168, 24).unwrap();
        let w = windows.len();
        let covered: Vec<f64> = windows.iter().flat_map(|w| w.unscaled_target()).collect();
        let expected: Vec<f64> = (400 - 24 * w..400).map(|i| i as f64).collect();
        assert_eq!(covered.len(), expected.len());
        for (a, b) in covered.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        assert_eq!(windows.last().unwrap().start + 168 + 24, 400);
        assert!(windows.iter().enumerate().all(|(i, w)| w.index == i));
    }

    #[test]
    fn window_scale_comes_from_own_history() {
        let ds = dataset(&[50]);
        let w = window_at(&ds, 0, 10, 4, 2).unwrap();
        // history 10..14 → 1 + mean = 1 + 11.5
        assert_eq!(w.scale, 12.5);
        assert_eq!(w.history[0], 10.0 / 12.5);
        assert_eq!(w.covariates.len(), 6 * N_COVARIATES);
    }

    #[test]
    fn holdout_tail_is_untouched() {
        let ds = dataset(&[200]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let val = make_windows(
            &ds,
            48,
            24,
            24,
            WindowMode::Eval {
                max_windows: Some(2),
                holdout: 24,
            },
            &mut rng,
        )
        .unwrap();
        assert_eq!(val.len(), 2);
        assert_eq!(val[1].start + 72, 176);
        let train = make_windows(
            &ds,
            48,
            24,
            1,
            WindowMode::Train {
                count: 200,
                holdout: 72,
            },
            &mut rng,
        )
        .unwrap();
        assert!(train.iter().all(|w| w.start + 72 <= 128));
        let too_much = make_windows(
            &ds,
            48,
            24,
            24,
            WindowMode::Eval {
                max_windows: None,
                holdout: 130,
            },
            &mut rng,
        );
        assert!(matches!(too_much, Err(Error::WindowTooLong { .. })));
    }

    #[test]
    fn train_windows_are_seeded() {
        let ds = dataset(&[60, 80]);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            make_windows(&ds, 12, 6, 1, WindowMode::Train { count: 20, holdout: 0 }, &mut rng).unwrap()
        };
        assert_eq!(draw(1), draw(1));
        assert!(draw(1)
            .iter()
            .all(|w| w.start + 18 <= ds.series()[w.series_id as usize].len()));
    }
}
