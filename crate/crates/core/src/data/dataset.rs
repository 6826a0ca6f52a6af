use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling frequency of every series in a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Hourly,
    Daily,
}

impl Frequency {
    pub fn step(self) -> TimeDelta {
        match self {
            Frequency::Hourly => TimeDelta::hours(1),
            Frequency::Daily => TimeDelta::days(1),
        }
    }

    /// Names of the time covariates produced for this frequency, in order.
    pub fn covariate_names(self) -> Vec<String> {
        let names: [&str; 3] = match self {
            Frequency::Hourly => ["hour_of_day", "day_of_week", "age"],
            Frequency::Daily => ["day_of_month", "month", "age"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    fn from_step(step: TimeDelta) -> Option<Self> {
        if step == TimeDelta::hours(1) {
            Some(Frequency::Hourly)
        } else if step == TimeDelta::days(1) {
            Some(Frequency::Daily)
        } else {
            None
        }
    }
}

impl std::str::FromStr for Frequency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hourly" | "h" | "1h" => Ok(Frequency::Hourly),
            "daily" | "d" | "1d" => Ok(Frequency::Daily),
            other => Err(Error::InvalidConfig(format!("unknown frequency `{other}`"))),
        }
    }
}

/// One univariate series with a regular time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub id: i64,
    pub timestamps: Vec<NaiveDateTime>,
    pub values: Vec<f64>,
}

impl Series {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A set of related series sharing one frequency.
///
/// Construction validates that ids are unique and every series is regularly
/// spaced with no gaps; after that the dataset is immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    series: Vec<Series>,
    frequency: Frequency,
    covariate_schema: Vec<String>,
}

impl TimeSeriesDataset {
    pub fn new(series: Vec<Series>, frequency: Frequency) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for s in &series {
            if !seen.insert(s.id) {
                return Err(Error::DuplicateSeries(s.id));
            }
            if s.timestamps.len() != s.values.len() {
                return Err(Error::ShapeMismatch(format!(
                    "series {}: {} timestamps for {} values",
                    s.id,
                    s.timestamps.len(),
                    s.values.len()
                )));
            }
            check_regular(s, frequency)?;
            if s.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("series values"));
            }
        }
        Ok(Self {
            series,
            frequency,
            covariate_schema: frequency.covariate_names(),
        })
    }

    pub fn series(&self) -> &[Series] {
        &self.series
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn covariate_schema(&self) -> &[String] {
        &self.covariate_schema
    }

    pub fn n_series(&self) -> usize {
        self.series.len()
    }

    pub fn min_len(&self) -> usize {
        self.series.iter().map(Series::len).min().unwrap_or(0)
    }

    pub fn find(&self, series_id: i64) -> Option<&Series> {
        self.series.iter().find(|s| s.id == series_id)
    }

    /// Largest series id plus one; the size of the id embedding table needed.
    pub fn id_span(&self) -> usize {
        self.series.iter().map(|s| s.id.max(0) as usize + 1).max().unwrap_or(0)
    }

    /// Drops the final `n` observations of every series.
    pub fn truncate_tail(&self, n: usize) -> Result<Self> {
        let mut series = Vec::with_capacity(self.series.len());
        for s in &self.series {
            if n >= s.len() {
                return Err(Error::WindowTooLong {
                    needed: n + 1,
                    len: s.len(),
                });
            }
            let keep = s.len() - n;
            series.push(Series {
                id: s.id,
                timestamps: s.timestamps[..keep].to_vec(),
                values: s.values[..keep].to_vec(),
            });
        }
        Ok(Self {
            series,
            frequency: self.frequency,
            covariate_schema: self.covariate_schema.clone(),
        })
    }

    /// Writes the dataset as long-format CSV (`timestamp,series_id,value`).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestamp", "series_id", "value"])?;
        for s in &self.series {
            for (ts, v) in s.timestamps.iter().zip(&s.values) {
                w.write_record([format_timestamp(ts), s.id.to_string(), v.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn check_regular(s: &Series, frequency: Frequency) -> Result<()> {
    let step = frequency.step();
    for pair in s.timestamps.windows(2) {
        let delta = pair[1] - pair[0];
        if delta <= TimeDelta::zero() {
            return Err(Error::NonMonotoneTimestamps {
                series_id: s.id,
                timestamp: format_timestamp(&pair[1]),
            });
        }
        if delta != step {
            return Err(Error::GapInSeries {
                series_id: s.id,
                timestamp: format_timestamp(&pair[1]),
            });
        }
    }
    Ok(())
}

pub fn format_timestamp(ts: &NaiveDateTime) -> String {
    ts.format("%Y-%m-%dT%H:%M:%S").to_string()
}

/// Parses ISO-8601 timestamps: full date-times (with `T` or space, optional
/// offset, which is normalized to UTC) and bare dates.
pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.naive_utc());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt);
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Column mapping for long-format CSV input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub timestamp: String,
    pub series_id: String,
    pub value: String,
    /// `None` infers the frequency from the first series.
    pub frequency: Option<Frequency>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            series_id: "series_id".into(),
            value: "value".into(),
            frequency: None,
        }
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<TimeSeriesDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Reads long-format CSV. Rows are grouped by series id and sorted by time;
/// any unparseable row, duplicate timestamp or gap is a hard error.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<TimeSeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (ts_col, id_col, val_col) = (col(&schema.timestamp)?, col(&schema.series_id)?, col(&schema.value)?);

    let mut grouped: BTreeMap<i64, Vec<(NaiveDateTime, f64)>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let invalid = |message: String| Error::InvalidRecord { line, message };
        let field = |i: usize| record.get(i).unwrap_or("");
        let ts = parse_timestamp(field(ts_col))
            .ok_or_else(|| invalid(format!("unparseable timestamp `{}`", field(ts_col))))?;
        let id: i64 = field(id_col)
            .parse()
            .map_err(|_| invalid(format!("unparseable series id `{}`", field(id_col))))?;
        let value: f64 = field(val_col)
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| invalid(format!("unparseable value `{}`", field(val_col))))?;
        grouped.entry(id).or_default().push((ts, value));
    }

    let mut series = Vec::with_capacity(grouped.len());
    for (id, mut rows) in grouped {
        rows.sort_by_key(|(ts, _)| *ts);
        for pair in rows.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::NonMonotoneTimestamps {
                    series_id: id,
                    timestamp: format_timestamp(&pair[1].0),
                });
            }
        }
        let (timestamps, values) = rows.into_iter().unzip();
        series.push(Series { id, timestamps, values });
    }

    let frequency = match schema.frequency {
        Some(f) => f,
        None => infer_frequency(&series)?,
    };
    TimeSeriesDataset::new(series, frequency)
}

fn infer_frequency(series: &[Series]) -> Result<Frequency> {
    let steps: Vec<TimeDelta> = series
        .iter()
        .flat_map(|s| s.timestamps.windows(2).map(|p| p[1] - p[0]))
        .collect();
    let smallest = steps.iter().min().copied();
    match smallest {
        // a single observation per series carries no step; hourly is the common case
        None => Ok(Frequency::Hourly),
        Some(step) => Frequency::from_step(step)
            .ok_or_else(|| Error::InvalidConfig(format!("cannot infer frequency from step of {step}"))),
    }
}
