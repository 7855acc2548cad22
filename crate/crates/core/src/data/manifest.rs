//! Manifest-driven ingestion: a `name,path` CSV mapping feature names to snapshots.

use super::{align, append_moving_average, csv::load_series_csv, AlignedDataset, RawSeries};
use super::{MOVING_AVG_NAME, MOVING_AVG_WINDOW};
use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

/// Parsed manifest: feature names with their snapshot paths.
/// A `-` path marks a derived column that is computed, not loaded.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub entries: Vec<(String, Option<PathBuf>)>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut lines = text.lines().enumerate();

        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: "empty manifest, expected `name,path` header".into(),
        })?;
        if header.trim() != "name,path" {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 1,
                message: format!("expected header `name,path`, got `{}`", header.trim()),
            });
        }

        let mut entries = Vec::new();
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (name, rel) = line.split_once(',').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: format!("expected `name,path`, got `{line}`"),
            })?;
            let name = name.trim().to_string();
            let rel = rel.trim();
            if entries.iter().any(|(n, _)| *n == name) {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: format!("duplicate manifest entry {name}"),
                });
            }
            let path = if rel == "-" { None } else { Some(base.join(rel)) };
            entries.push((name, path));
        }
        if entries.is_empty() {
            return Err(Error::validation("manifest has no entries"));
        }
        Ok(Manifest { entries })
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Loads every manifest series, aligns them on common dates, and appends any
/// derived moving-average column. Provenance records each source file's digest.
pub fn ingest_manifest(manifest_path: &Path) -> Result<AlignedDataset> {
    let manifest = Manifest::load(manifest_path)?;

    let mut series_list: Vec<RawSeries> = Vec::new();
    let mut provenance = Vec::new();
    let mut wants_moving_avg = false;
    for (name, path) in &manifest.entries {
        match path {
            Some(path) => {
                series_list.push(load_series_csv(path, name)?);
                provenance.push((path.display().to_string(), sha256_file(path)?));
            }
            None if name == MOVING_AVG_NAME => wants_moving_avg = true,
            None => {
                return Err(Error::validation(format!(
                    "manifest entry {name} has no path; only {MOVING_AVG_NAME} may be derived"
                )));
            }
        }
    }

    let mut dataset = align(&series_list)?;
    dataset.provenance = provenance;
    if wants_moving_avg {
        dataset = append_moving_average(&dataset, MOVING_AVG_WINDOW)?;
    }
    Ok(dataset)
}
