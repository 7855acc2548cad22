//! Train/test splitting, min-max scaling, and sliding-window tensor assembly.

use crate::data::AlignedDataset;
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Array3};
use std::fs;
use std::io::Read;
use std::path::Path;

/// Chronological split: the last `test_days` rows are the test segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub test_days: usize,
}

/// Splits a dataset into (train, test) without reordering rows.
pub fn split(dataset: &AlignedDataset, spec: SplitSpec) -> Result<(AlignedDataset, AlignedDataset)> {
    let n = dataset.num_rows();
    if spec.test_days == 0 || spec.test_days >= n {
        return Err(Error::validation(format!(
            "test_days {} must be in 1..{n}",
            spec.test_days
        )));
    }
    let cut = n - spec.test_days;
    Ok((dataset.slice_rows(0, cut), dataset.slice_rows(cut, n)))
}

/// Per-feature min-max parameters. Transform maps the fitted range onto [0, 1];
/// values outside the range extrapolate rather than clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalerParams {
    pub names: Vec<String>,
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl ScalerParams {
    /// Fits one (min, max) pair per column.
    pub fn fit(dataset: &AlignedDataset) -> Result<ScalerParams> {
        if dataset.num_rows() == 0 {
            return Err(Error::insufficient("cannot fit scaler on empty dataset"));
        }
        let mut names = Vec::new();
        let mut mins = Vec::new();
        let mut maxs = Vec::new();
        for (name, column) in dataset.columns() {
            names.push(name.to_string());
            mins.push(column.iter().copied().fold(f64::INFINITY, f64::min));
            maxs.push(column.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        Ok(ScalerParams { names, mins, maxs })
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::validation(format!("scaler has no feature {name}")))
    }

    pub fn scale_value(&self, name: &str, value: f64) -> Result<f64> {
        let i = self.index_of(name)?;
        let span = self.maxs[i] - self.mins[i];
        // Constant columns map to 0 so they carry no information downstream.
        Ok(if span == 0.0 { 0.0 } else { (value - self.mins[i]) / span })
    }

    pub fn unscale_value(&self, name: &str, value: f64) -> Result<f64> {
        let i = self.index_of(name)?;
        Ok(self.mins[i] + value * (self.maxs[i] - self.mins[i]))
    }

    /// Applies the fitted parameters column-by-column.
    pub fn transform(&self, dataset: &AlignedDataset) -> Result<AlignedDataset> {
        let mut out = dataset.clone();
        for (name, column) in dataset.columns() {
            let scaled: Result<Vec<f64>> =
                column.iter().map(|v| self.scale_value(name, *v)).collect();
            out.replace_column(name, scaled?)?;
        }
        Ok(out)
    }

    /// Inverse of [`transform`](Self::transform) for a single feature vector.
    pub fn inverse(&self, name: &str, values: &[f64]) -> Result<Vec<f64>> {
        values.iter().map(|v| self.unscale_value(name, *v)).collect()
    }
}

/// Supervised windows: `inputs[i]` covers `window_len` consecutive rows of the
/// selected input features, `targets[i]` is the target feature at the next row.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSet {
    pub input_names: Vec<String>,
    pub target_name: String,
    /// (num_windows, window_len, num_features)
    pub inputs: Array3<f64>,
    pub targets: Array1<f64>,
}

impl WindowedSet {
    pub fn num_windows(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn window_len(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn num_features(&self) -> usize {
        self.inputs.shape()[2]
    }

    /// Windows as flat rows (window_len · num_features), for tree models.
    pub fn flattened_inputs(&self) -> Array2<f64> {
        let (n, w, f) = self.inputs.dim();
        self.inputs
            .to_shape((n, w * f))
            .expect("contiguous window tensor")
            .to_owned()
    }

    /// Serializes to a little-endian binary cache: dims header, then row-major data.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        let names = format!("{}|{}", self.input_names.join(","), self.target_name);
        bytes.extend_from_slice(&(names.len() as u64).to_le_bytes());
        bytes.extend_from_slice(names.as_bytes());
        for dim in self.inputs.shape() {
            bytes.extend_from_slice(&(*dim as u64).to_le_bytes());
        }
        for v in self.inputs.iter().chain(self.targets.iter()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<WindowedSet> {
        let mut file = fs::File::open(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cursor = Cursor::new(&bytes, path);
        cursor.expect_magic()?;
        let names_len = cursor.take_u64()? as usize;
        let names = cursor.take_str(names_len)?;
        let (inputs_part, target_name) = names
            .rsplit_once('|')
            .ok_or_else(|| Error::Decode(format!("{}: malformed name header", path.display())))?;
        let (n, w, f) = (
            cursor.take_u64()? as usize,
            cursor.take_u64()? as usize,
            cursor.take_u64()? as usize,
        );
        let mut inputs = Vec::with_capacity(n * w * f);
        for _ in 0..n * w * f {
            inputs.push(cursor.take_f64()?);
        }
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            targets.push(cursor.take_f64()?);
        }
        cursor.expect_end()?;
        Ok(WindowedSet {
            input_names: if inputs_part.is_empty() {
                Vec::new()
            } else {
                inputs_part.split(',').map(str::to_string).collect()
            },
            target_name: target_name.to_string(),
            inputs: Array3::from_shape_vec((n, w, f), inputs)
                .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?,
            targets: Array1::from_vec(targets),
        })
    }
}

const MAGIC: &[u8; 8] = b"BTCWIN01";

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], path: &Path) -> Self {
        Cursor {
            bytes,
            pos: 0,
            path: path.display().to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Decode(format!("{}: truncated cache", self.path)));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn expect_magic(&mut self) -> Result<()> {
        if self.take(MAGIC.len())? != MAGIC {
            return Err(Error::Decode(format!("{}: not a window cache", self.path)));
        }
        Ok(())
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn take_f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn take_str(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|e| Error::Decode(format!("{}: {e}", self.path)))
    }

    fn expect_end(&mut self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Decode(format!("{}: trailing bytes", self.path)));
        }
        Ok(())
    }
}

/// Builds supervised windows over all columns, targeting `target`.
pub fn make_windows(
    dataset: &AlignedDataset,
    window_len: usize,
    target: &str,
) -> Result<WindowedSet> {
    let input_names: Vec<&str> = dataset.column_names().iter().map(String::as_str).collect();
    make_windows_selected(dataset, window_len, &input_names, target)
}

/// Builds supervised windows over a chosen input-feature subset. The target
/// column need not be among the inputs.
pub fn make_windows_selected(
    dataset: &AlignedDataset,
    window_len: usize,
    input_names: &[&str],
    target: &str,
) -> Result<WindowedSet> {
    if window_len == 0 {
        return Err(Error::validation("window_len must be ≥ 1"));
    }
    let n = dataset.num_rows();
    if n <= window_len {
        return Err(Error::insufficient(format!(
            "need > {window_len} rows to build windows, got {n}"
        )));
    }
    let columns: Vec<&[f64]> = input_names
        .iter()
        .map(|name| dataset.column(name))
        .collect::<Result<_>>()?;
    let target_column = dataset.column(target)?;

    let num_windows = n - window_len;
    let num_features = columns.len();
    let mut inputs = Array3::zeros((num_windows, window_len, num_features));
    let mut targets = Array1::zeros(num_windows);
    for i in 0..num_windows {
        for t in 0..window_len {
            for (j, column) in columns.iter().enumerate() {
                inputs[[i, t, j]] = column[i + t];
            }
        }
        targets[i] = target_column[i + window_len];
    }

    Ok(WindowedSet {
        input_names: input_names.iter().map(|s| s.to_string()).collect(),
        target_name: target.to_string(),
        inputs,
        targets,
    })
}
