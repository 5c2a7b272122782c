//! Ingestion and preprocessing of close-price series: Yahoo-Finance-export
//! CSV parsing, min-max scaling to `[-1, 1]`, sliding-window supervised
//! pairs and the chronological 60/20/20 split.
//!
//! The scaler for a target series is fitted on the raw values of its
//! training range only; every source series gets its own scaler fitted on
//! its full length. Source and target are never scaled jointly.

use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

pub const DEFAULT_LOOKBACK: usize = 22;
pub const DEFAULT_HORIZON: usize = 1;

/// Canonical 60/20/20 train/validation/test proportions.
pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.6, 0.2, 0.2);

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: failed to read CSV: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: column `{column}` not found in header")]
    UnknownColumn { path: String, column: String },
    #[error("{path}: row {row}: {message}")]
    Malformed {
        path: String,
        row: usize,
        message: String,
    },
    #[error("{path}: {rows} usable rows; need at least {needed}")]
    TooShort {
        path: String,
        rows: usize,
        needed: usize,
    },
    #[error("series `{symbol}`: duplicate date {date}")]
    DuplicateDate { symbol: String, date: NaiveDate },
    #[error("series `{symbol}`: close at {date} is {value}; must be finite and > 0")]
    InvalidClose {
        symbol: String,
        date: NaiveDate,
        value: f64,
    },
    #[error("cannot fit scaler: all values equal ({0})")]
    DegenerateScale(f64),
    #[error("cannot fit scaler on empty or non-finite input")]
    UnfittableScale,
    #[error("series of length {len} too short for lookback {lookback} + horizon {horizon}")]
    TooShortToWindow {
        len: usize,
        lookback: usize,
        horizon: usize,
    },
    #[error("need at least 5 windows to split, got {0}")]
    TooFewWindows(usize),
    #[error("invalid split ratios ({0}, {1}, {2}): must be positive and sum to 1")]
    BadRatios(f64, f64, f64),
}

/// A named, date-ordered univariate close-price series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    symbol: String,
    dates: Vec<NaiveDate>,
    closes: Vec<f64>,
}

impl PriceSeries {
    /// Sorts the observations by date and checks the series invariants:
    /// strictly increasing dates and finite positive closes.
    pub fn new(
        symbol: impl Into<String>,
        mut observations: Vec<(NaiveDate, f64)>,
    ) -> Result<Self, DataError> {
        let symbol = symbol.into();
        observations.sort_by_key(|(d, _)| *d);
        let mut dates = Vec::with_capacity(observations.len());
        let mut closes = Vec::with_capacity(observations.len());
        for (date, close) in observations {
            if dates.last() == Some(&date) {
                return Err(DataError::DuplicateDate { symbol, date });
            }
            if !close.is_finite() || close <= 0.0 {
                return Err(DataError::InvalidClose {
                    symbol,
                    date,
                    value: close,
                });
            }
            dates.push(date);
            closes.push(close);
        }
        Ok(Self {
            symbol,
            dates,
            closes,
        })
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn with_symbol(mut self, symbol: impl Into<String>) -> Self {
        self.symbol = symbol.into();
        self
    }

    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.closes
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }
}

/// Parses a Yahoo-Finance-export CSV
/// (`Date,Open,High,Low,Close,Adj Close,Volume`, ISO dates) and extracts the
/// requested price column. Rows with an empty or `null` value in that column
/// are dropped; rows are returned in ascending date order regardless of file
/// order. The symbol defaults to the file stem.
pub fn ingest_csv(path: impl AsRef<Path>, column: &str) -> Result<PriceSeries, DataError> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| DataError::Csv {
            path: path_str.clone(),
            source,
        })?;

    let headers = reader
        .headers()
        .map_err(|source| DataError::Csv {
            path: path_str.clone(),
            source,
        })?
        .clone();
    let date_idx = headers
        .iter()
        .position(|h| h == "Date")
        .ok_or_else(|| DataError::UnknownColumn {
            path: path_str.clone(),
            column: "Date".into(),
        })?;
    let col_idx = headers
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| DataError::UnknownColumn {
            path: path_str.clone(),
            column: column.into(),
        })?;

    let mut observations = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // +2: one for the header line, one for 1-based numbering.
        let row = i + 2;
        let record = record.map_err(|source| DataError::Csv {
            path: path_str.clone(),
            source,
        })?;
        let raw_value = record.get(col_idx).unwrap_or("");
        if raw_value.is_empty() || raw_value.eq_ignore_ascii_case("null") {
            continue;
        }
        let raw_date = record.get(date_idx).unwrap_or("");
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|e| {
            DataError::Malformed {
                path: path_str.clone(),
                row,
                message: format!("bad date `{raw_date}`: {e}"),
            }
        })?;
        let value: f64 = raw_value.parse().map_err(|e| DataError::Malformed {
            path: path_str.clone(),
            row,
            message: format!("bad {column} value `{raw_value}`: {e}"),
        })?;
        observations.push((date, value));
    }

    let symbol = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path_str.clone());
    PriceSeries::new(symbol, observations)
}

/// Checks that `series` has enough rows to be windowed and split
/// (`lookback + 2` at minimum), reporting the offending file.
pub fn require_ingestible(
    series: &PriceSeries,
    path: &str,
    lookback: usize,
) -> Result<(), DataError> {
    let needed = lookback + 2;
    if series.len() < needed {
        return Err(DataError::TooShort {
            path: path.to_string(),
            rows: series.len(),
            needed,
        });
    }
    Ok(())
}

/// Min-max normalization constants mapping `[lo, hi]` onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub lo: f64,
    pub hi: f64,
}

impl ScalingParams {
    /// Fits `lo = min(values)`, `hi = max(values)`. A constant series has no
    /// usable scale and is rejected.
    pub fn fit(values: &[f64]) -> Result<Self, DataError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(DataError::UnfittableScale);
        }
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            return Err(DataError::DegenerateScale(lo));
        }
        Ok(Self { lo, hi })
    }

    /// Maps `lo -> -1`, `hi -> +1` linearly.
    pub fn scale(&self, v: f64) -> f64 {
        2.0 * (v - self.lo) / (self.hi - self.lo) - 1.0
    }

    /// Exact inverse of [`ScalingParams::scale`].
    pub fn inverse_scale(&self, v: f64) -> f64 {
        (v + 1.0) * (self.hi - self.lo) / 2.0 + self.lo
    }
}

/// Scaled sliding-window supervised pairs. Row `i` of `inputs` holds the
/// `lookback` most recent scaled prices, newest first; `targets[i]` is the
/// scaled price `horizon` steps after the newest input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedDataset {
    pub inputs: Matrix,
    pub targets: Vec<f64>,
    pub scaling: ScalingParams,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn lookback(&self) -> usize {
        self.inputs.cols()
    }

    fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            inputs: self.inputs.slice_rows(start, len),
            targets: self.targets[start..start + len].to_vec(),
            scaling: self.scaling,
        }
    }
}

/// Windows a series into `len - lookback - horizon + 1` supervised pairs
/// using an already fitted scaler.
pub fn make_windows(
    series: &PriceSeries,
    lookback: usize,
    horizon: usize,
    scaling: ScalingParams,
) -> Result<WindowedDataset, DataError> {
    assert!(lookback >= 1 && horizon >= 1);
    let n = series.len();
    if n < lookback + horizon {
        return Err(DataError::TooShortToWindow {
            len: n,
            lookback,
            horizon,
        });
    }
    let scaled: Vec<f64> = series.values().iter().map(|&v| scaling.scale(v)).collect();
    let count = n - lookback - horizon + 1;
    let mut inputs = Matrix::zeros(count, lookback);
    let mut targets = Vec::with_capacity(count);
    for i in 0..count {
        let t = lookback - 1 + i;
        let row = inputs.row_mut(i);
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = scaled[t - j];
        }
        targets.push(scaled[t + horizon]);
    }
    Ok(WindowedDataset {
        inputs,
        targets,
        scaling,
    })
}

/// Chronological train/validation/test partition of one windowed dataset.
/// All three parts share the scaling parameters of the source dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: WindowedDataset,
    pub validation: WindowedDataset,
    pub test: WindowedDataset,
}

/// Partitions windows chronologically. Validation and test sizes are floored
/// at `ratio * count`; remainder windows go to train.
pub fn split_windows(
    ds: &WindowedDataset,
    ratios: (f64, f64, f64),
) -> Result<DataSplit, DataError> {
    let (rt, rv, rs) = ratios;
    if !(rt > 0.0 && rv > 0.0 && rs > 0.0) || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(DataError::BadRatios(rt, rv, rs));
    }
    let count = ds.len();
    if count < 5 {
        return Err(DataError::TooFewWindows(count));
    }
    let n_val = (rv * count as f64).floor() as usize;
    let n_test = (rs * count as f64).floor() as usize;
    let n_train = count - n_val - n_test;
    if n_val == 0 || n_test == 0 {
        return Err(DataError::TooFewWindows(count));
    }
    Ok(DataSplit {
        train: ds.slice(0, n_train),
        validation: ds.slice(n_train, n_val),
        test: ds.slice(n_train + n_val, n_test),
    })
}

/// Number of raw leading values touched by the first `n_train` windows,
/// inputs and targets included. The target scaler is fitted on exactly this
/// prefix so that no validation or test value leaks into it.
pub fn training_segment_len(lookback: usize, horizon: usize, n_train: usize) -> usize {
    lookback + horizon + n_train - 1
}

/// End-to-end preparation of a target series: derives the window counts,
/// fits the scaler on the raw training range only, windows the full series
/// and splits it 60/20/20 (or per `ratios`).
pub fn target_split(
    series: &PriceSeries,
    lookback: usize,
    horizon: usize,
    ratios: (f64, f64, f64),
) -> Result<DataSplit, DataError> {
    let n = series.len();
    if n < lookback + horizon {
        return Err(DataError::TooShortToWindow {
            len: n,
            lookback,
            horizon,
        });
    }
    let count = n - lookback - horizon + 1;
    if count < 5 {
        return Err(DataError::TooFewWindows(count));
    }
    let (_, rv, rs) = ratios;
    let n_val = (rv * count as f64).floor() as usize;
    let n_test = (rs * count as f64).floor() as usize;
    let n_train = count - n_val - n_test;
    let seg = training_segment_len(lookback, horizon, n_train);
    let scaling = ScalingParams::fit(&series.values()[..seg])?;
    let ds = make_windows(series, lookback, horizon, scaling)?;
    split_windows(&ds, ratios)
}

/// Windows a source series over its full length with its own scaler; sources
/// are never held out since their test metrics are not reported.
pub fn source_windows(
    series: &PriceSeries,
    lookback: usize,
    horizon: usize,
) -> Result<WindowedDataset, DataError> {
    let scaling = ScalingParams::fit(series.values())?;
    make_windows(series, lookback, horizon, scaling)
}

/// Renders a series into Yahoo CSV form, repeating the close across all
/// price columns. Used by tests and synthetic-data tooling.
pub fn to_csv_string(series: &PriceSeries) -> String {
    let mut out = String::from("Date,Open,High,Low,Close,Adj Close,Volume\n");
    for (date, value) in series.dates().iter().zip(series.values()) {
        let _ = writeln!(
            out,
            "{date},{value},{value},{value},{value},{value},0",
            date = date.format("%Y-%m-%d")
        );
    }
    out
}
