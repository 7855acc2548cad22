//! CSV snapshot format: `date,value` header, ISO dates, one point per line.

use super::RawSeries;
use crate::error::{Error, Result};
use chrono::NaiveDate;
use std::fs;
use std::io::Write;
use std::path::Path;

/// Loads one series from a `date,value` CSV. Parse failures name the line.
pub fn load_series_csv(path: &Path, name: &str) -> Result<RawSeries> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        message: "empty file, expected `date,value` header".into(),
    })?;
    if header.trim() != "date,value" {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("expected header `date,value`, got `{}`", header.trim()),
        });
    }

    let mut points = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (date_str, value_str) = line.split_once(',').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: line_no,
            message: format!("expected `date,value`, got `{line}`"),
        })?;
        let date = NaiveDate::parse_from_str(date_str.trim(), "%Y-%m-%d").map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: line_no,
            message: format!("bad date `{}`: {e}", date_str.trim()),
        })?;
        let value: f64 = value_str.trim().parse().map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: line_no,
            message: format!("bad value `{}`: {e}", value_str.trim()),
        })?;
        points.push((date, value));
    }

    RawSeries::new(name, points)
}

/// Writes a series snapshot atomically: temp file in the same directory, then rename.
pub fn write_series_csv(path: &Path, series: &RawSeries) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;

    let mut body = String::from("date,value\n");
    for (date, value) in &series.points {
        body.push_str(&format!("{date},{value:?}\n"));
    }

    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(body.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|source| {
        let _ = fs::remove_file(&tmp);
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    })
}
