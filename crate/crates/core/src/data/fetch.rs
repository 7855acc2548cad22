//! Daily-candle ingestion from an exchange's public OHLC JSON endpoint.

use super::{csv::write_series_csv, RawSeries};
use crate::error::{Error, Result};
use chrono::DateTime;
use serde_json::Value;
use std::path::Path;
use std::time::Duration;

/// Candle fields we extract, in the order the series are returned.
const FIELDS: [&str; 5] = ["Close", "Open", "High", "Low", "Volume"];

/// Fetches daily candles for `pair` and snapshots each field to `out_dir`.
///
/// Returns Close, Open, High, Low, Volume. Nothing is written unless the whole
/// payload parses, so a failed fetch leaves no partial snapshots behind.
pub fn fetch_ohlc(
    endpoint: &str,
    pair: &str,
    interval_minutes: u32,
    out_dir: &Path,
) -> Result<Vec<RawSeries>> {
    let url = format!("{endpoint}?pair={pair}&interval={interval_minutes}");
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .map_err(|e| Error::Fetch {
            url: url.clone(),
            message: e.to_string(),
        })?;
    let body = client
        .get(&url)
        .send()
        .and_then(|r| r.error_for_status())
        .and_then(|r| r.text())
        .map_err(|e| Error::Fetch {
            url: url.clone(),
            message: e.to_string(),
        })?;

    let series_list = parse_ohlc_payload(&body, pair)?;
    for series in &series_list {
        let path = out_dir.join(format!("{}.csv", series.name.to_lowercase()));
        write_series_csv(&path, series)?;
    }
    Ok(series_list)
}

/// Parses an array-of-candles OHLC payload:
/// `{"error":[],"result":{"<PAIR>":[[time,open,high,low,close,vwap,volume,count],...]}}`.
/// Candle numbers may arrive as JSON numbers or as quoted strings.
pub fn parse_ohlc_payload(body: &str, pair: &str) -> Result<Vec<RawSeries>> {
    let root: Value =
        serde_json::from_str(body).map_err(|e| Error::Decode(format!("OHLC payload: {e}")))?;

    if let Some(errors) = root.get("error").and_then(Value::as_array) {
        if !errors.is_empty() {
            return Err(Error::Decode(format!("exchange error: {errors:?}")));
        }
    }
    let result = root
        .get("result")
        .and_then(Value::as_object)
        .ok_or_else(|| Error::Decode("missing `result` object".into()))?;

    // The exchange may canonicalize the pair code, so fall back to the first
    // non-`last` key when the requested one is absent.
    let candles = result
        .get(pair)
        .or_else(|| {
            result
                .iter()
                .find(|(k, _)| k.as_str() != "last")
                .map(|(_, v)| v)
        })
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Decode(format!("no candle array for pair {pair}")))?;

    let mut columns: [Vec<(chrono::NaiveDate, f64)>; 5] = Default::default();
    for (idx, candle) in candles.iter().enumerate() {
        let row = candle
            .as_array()
            .ok_or_else(|| Error::Decode(format!("candle {idx} is not an array")))?;
        if row.len() < 7 {
            return Err(Error::Decode(format!(
                "candle {idx} has {} fields, expected ≥ 7",
                row.len()
            )));
        }
        let ts = as_f64(&row[0])
            .ok_or_else(|| Error::Decode(format!("candle {idx}: bad timestamp {:?}", row[0])))?;
        let date = DateTime::from_timestamp(ts as i64, 0)
            .ok_or_else(|| Error::Decode(format!("candle {idx}: timestamp {ts} out of range")))?
            .date_naive();

        // Payload order: time, open, high, low, close, vwap, volume.
        let get = |pos: usize, what: &str| {
            as_f64(&row[pos]).ok_or_else(|| {
                Error::Decode(format!("candle {idx}: bad {what} {:?}", row[pos]))
            })
        };
        let open = get(1, "open")?;
        let high = get(2, "high")?;
        let low = get(3, "low")?;
        let close = get(4, "close")?;
        let volume = get(6, "volume")?;

        if high < open.max(close) || low > open.min(close) {
            log::warn!(
                "candle {date}: high/low inconsistent with open/close \
                 (O={open} H={high} L={low} C={close}); keeping row"
            );
        }

        for (column, value) in columns.iter_mut().zip([close, open, high, low, volume]) {
            column.push((date, value));
        }
    }

    FIELDS
        .iter()
        .zip(columns)
        .map(|(name, points)| RawSeries::new(*name, points))
        .collect()
}

fn as_f64(value: &Value) -> Option<f64> {
    match value {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.parse().ok(),
        _ => None,
    }
}
