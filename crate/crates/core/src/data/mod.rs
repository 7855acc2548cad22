//! Raw per-series snapshots and their alignment into the canonical feature table.

mod csv;
mod fetch;
mod manifest;

pub use csv::{load_series_csv, write_series_csv};
pub use fetch::{fetch_ohlc, parse_ohlc_payload};
pub use manifest::{ingest_manifest, Manifest};

use crate::error::{Error, Result};
use chrono::NaiveDate;
use std::collections::BTreeSet;

/// Table-1 short names in canonical order. `Moving_Avg_30` is derived, not loaded.
pub const SERIES_NAMES: [&str; 13] = [
    "Close",
    "Low",
    "High",
    "Open",
    "Trans_Volume",
    "Volume",
    "Hash_Rate",
    "Trans_Fees",
    "XAU_USD",
    "Trade_Volume",
    "Google_Trend",
    "Fear_Greed",
    "Moving_Avg_30",
];

pub const MOVING_AVG_NAME: &str = "Moving_Avg_30";
pub const MOVING_AVG_WINDOW: usize = 30;

/// Series that must never go negative.
const NON_NEGATIVE: [&str; 7] = [
    "Volume",
    "Trans_Volume",
    "Trade_Volume",
    "Hash_Rate",
    "Trans_Fees",
    "Google_Trend",
    "Fear_Greed",
];

/// One raw time series: strictly increasing dates, finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub name: String,
    pub points: Vec<(NaiveDate, f64)>,
}

impl RawSeries {
    /// Builds a series, sorting points by date and enforcing the invariants.
    pub fn new(name: impl Into<String>, mut points: Vec<(NaiveDate, f64)>) -> Result<Self> {
        let name = name.into();
        points.sort_by_key(|(d, _)| *d);
        for pair in points.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::validation(format!(
                    "series {name}: duplicate date {}",
                    pair[0].0
                )));
            }
        }
        let non_negative = NON_NEGATIVE.contains(&name.as_str());
        for (date, value) in &points {
            if !value.is_finite() {
                return Err(Error::validation(format!(
                    "series {name}: non-finite value at {date}"
                )));
            }
            if non_negative && *value < 0.0 {
                return Err(Error::validation(format!(
                    "series {name}: negative value {value} at {date}"
                )));
            }
        }
        Ok(RawSeries { name, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Date-aligned feature table; every column has one value per date.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedDataset {
    pub dates: Vec<NaiveDate>,
    names: Vec<String>,
    values: Vec<Vec<f64>>,
    /// (source path, sha256 hex) per ingested file.
    pub provenance: Vec<(String, String)>,
}

impl AlignedDataset {
    /// Builds a dataset from equal-length named columns.
    pub fn from_columns(
        dates: Vec<NaiveDate>,
        columns: Vec<(String, Vec<f64>)>,
    ) -> Result<AlignedDataset> {
        let mut dataset = AlignedDataset {
            dates,
            names: Vec::new(),
            values: Vec::new(),
            provenance: Vec::new(),
        };
        for (name, values) in columns {
            dataset.push_column(name, values)?;
        }
        Ok(dataset)
    }

    pub fn num_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn num_columns(&self) -> usize {
        self.names.len()
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i].as_slice())
            .ok_or_else(|| Error::validation(format!("unknown feature {name}")))
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().map(Vec::as_slice))
    }

    /// Dataset restricted to the named columns, in the order given.
    pub fn select(&self, names: &[&str]) -> Result<AlignedDataset> {
        let mut values = Vec::with_capacity(names.len());
        for name in names {
            values.push(self.column(name)?.to_vec());
        }
        Ok(AlignedDataset {
            dates: self.dates.clone(),
            names: names.iter().map(|s| s.to_string()).collect(),
            values,
            provenance: self.provenance.clone(),
        })
    }

    /// Dataset restricted to rows with date ≤ `end`.
    pub fn truncate_after(&self, end: NaiveDate) -> AlignedDataset {
        let keep = self.dates.iter().take_while(|d| **d <= end).count();
        AlignedDataset {
            dates: self.dates[..keep].to_vec(),
            names: self.names.clone(),
            values: self.values.iter().map(|v| v[..keep].to_vec()).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Rows [start, end) as a new dataset.
    pub fn slice_rows(&self, start: usize, end: usize) -> AlignedDataset {
        AlignedDataset {
            dates: self.dates[start..end].to_vec(),
            names: self.names.clone(),
            values: self.values.iter().map(|v| v[start..end].to_vec()).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Overwrites an existing column with values of matching length.
    pub fn replace_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.num_rows() {
            return Err(Error::validation(format!(
                "column {name} has {} rows, dataset has {}",
                values.len(),
                self.num_rows()
            )));
        }
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::validation(format!("unknown feature {name}")))?;
        self.values[i] = values;
        Ok(())
    }

    /// Appends a column of matching length.
    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.num_rows() {
            return Err(Error::validation(format!(
                "column {name} has {} rows, dataset has {}",
                values.len(),
                self.num_rows()
            )));
        }
        if self.names.iter().any(|n| *n == name) {
            return Err(Error::validation(format!("duplicate column {name}")));
        }
        self.names.push(name);
        self.values.push(values);
        Ok(())
    }

    /// Converts each column back to a RawSeries (used by the idempotence property).
    pub fn to_series(&self) -> Vec<RawSeries> {
        self.columns()
            .map(|(name, values)| RawSeries {
                name: name.to_string(),
                points: self.dates.iter().copied().zip(values.iter().copied()).collect(),
            })
            .collect()
    }
}

/// Restricts all series to their common dates. Column order follows input order.
pub fn align(series_list: &[RawSeries]) -> Result<AlignedDataset> {
    if series_list.is_empty() {
        return Err(Error::validation("align requires at least one series"));
    }
    let mut seen = BTreeSet::new();
    for s in series_list {
        if !seen.insert(s.name.as_str()) {
            return Err(Error::validation(format!("duplicate series name {}", s.name)));
        }
    }

    let mut common: BTreeSet<NaiveDate> = series_list[0].points.iter().map(|(d, _)| *d).collect();
    for s in &series_list[1..] {
        let dates: BTreeSet<NaiveDate> = s.points.iter().map(|(d, _)| *d).collect();
        common = common.intersection(&dates).copied().collect();
    }
    let dates: Vec<NaiveDate> = common.into_iter().collect();
    if dates.is_empty() {
        return Err(Error::insufficient("series share no common dates"));
    }

    let mut values = Vec::with_capacity(series_list.len());
    for s in series_list {
        let mut column = Vec::with_capacity(dates.len());
        let mut iter = s.points.iter().peekable();
        for date in &dates {
            while let Some((d, _)) = iter.peek() {
                if d < date {
                    iter.next();
                } else {
                    break;
                }
            }
            match iter.next() {
                Some((d, v)) if d == date => column.push(*v),
                _ => unreachable!("date {date} in intersection but missing from {}", s.name),
            }
        }
        values.push(column);
    }

    Ok(AlignedDataset {
        dates,
        names: series_list.iter().map(|s| s.name.clone()).collect(),
        values,
        provenance: Vec::new(),
    })
}

/// Trailing moving average; output element i is the mean of values[i .. i+window).
pub fn moving_average(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::validation("moving_average window must be ≥ 1"));
    }
    if values.len() < window {
        return Err(Error::insufficient(format!(
            "moving_average needs ≥ {window} values, got {}",
            values.len()
        )));
    }
    let mut out = Vec::with_capacity(values.len() - window + 1);
    for i in 0..=values.len() - window {
        // Plain re-summation per window: O(n·w) but immune to running-sum drift.
        let mean = values[i..i + window].iter().sum::<f64>() / window as f64;
        out.push(mean);
    }
    Ok(out)
}

/// Appends the derived moving-average column, dropping the first `window − 1` rows.
pub fn append_moving_average(dataset: &AlignedDataset, window: usize) -> Result<AlignedDataset> {
    let close = dataset.column("Close")?;
    let ma = moving_average(close, window)?;
    let offset = window - 1;
    let mut out = dataset.slice_rows(offset, dataset.num_rows());
    out.push_column(MOVING_AVG_NAME, ma)?;
    Ok(out)
}
