//! Experiment catalogue and runner: slices the aligned table to a date range,
//! optionally appends decomposition modes, scales, windows, trains every
//! requested model, backtests, and persists artifacts under a digest-named
//! run directory.

use crate::data::{AlignedDataset, SERIES_NAMES};
use crate::error::{Error, Result};
use crate::eval::{
    baseline_forecast, ensemble_with_baseline, metrics, roi, rolling_forecast, EnsembleMode,
    ForecastTrace, MetricsReport, RoiReport,
};
use crate::gbt::{feature_importance, gbt_train, GbtConfig};
use crate::neural::{train as train_network, write_loss_history_csv, Architecture, NetworkSpec};
use crate::preprocess::{make_windows_selected, ScalerParams, WindowedSet};
use crate::vmd::{decompose, decompose_causal, VmdConfig};
use chrono::NaiveDate;
use ndarray::s;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Input length of every supervised window, in days.
pub const WINDOW_LEN: usize = 25;
/// Held-out backtest length, in days.
pub const TEST_DAYS: usize = 90;
/// Training-tail rows the tree model holds out for early stopping.
pub const GBT_HOLDOUT: usize = 90;
/// Stamped into run digests so results from different builds never collide.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything the runner knows how to train and backtest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "GRU")]
    Gru,
    #[serde(rename = "BiGRU")]
    BiGru,
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "BiLSTM")]
    BiLstm,
    #[serde(rename = "BiLSTM_d")]
    BiLstmD,
    #[serde(rename = "GBT")]
    Gbt,
    #[serde(rename = "Baseline")]
    Baseline,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Gru,
        ModelKind::BiGru,
        ModelKind::Lstm,
        ModelKind::BiLstm,
        ModelKind::BiLstmD,
        ModelKind::Gbt,
        ModelKind::Baseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gru => "GRU",
            ModelKind::BiGru => "BiGRU",
            ModelKind::Lstm => "LSTM",
            ModelKind::BiLstm => "BiLSTM",
            ModelKind::BiLstmD => "BiLSTM_d",
            ModelKind::Gbt => "GBT",
            ModelKind::Baseline => "Baseline",
        }
    }

    pub fn parse(name: &str) -> Result<ModelKind> {
        let lowered = name.trim().to_ascii_lowercase();
        ModelKind::ALL
            .into_iter()
            .find(|kind| kind.name().to_ascii_lowercase() == lowered)
            .ok_or_else(|| Error::validation(format!("unknown model {name}")))
    }

    fn architecture(self) -> Option<Architecture> {
        match self {
            ModelKind::Gru => Some(Architecture::Gru),
            ModelKind::BiGru => Some(Architecture::BiGru),
            ModelKind::Lstm => Some(Architecture::Lstm),
            ModelKind::BiLstm => Some(Architecture::BiLstm),
            ModelKind::BiLstmD => Some(Architecture::BiLstmD),
            ModelKind::Gbt | ModelKind::Baseline => None,
        }
    }
}

/// A declarative experiment: which features, which models, over which dates,
/// with or without decomposition and baseline ensembling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: u32,
    pub feature_set: Vec<String>,
    pub models: Vec<ModelKind>,
    /// Inclusive (start, end) bounds; `None` leaves that side open.
    pub date_range: (Option<NaiveDate>, Option<NaiveDate>),
    /// Average every model's predictions with the lag-1 baseline.
    pub ensemble: bool,
    /// When set, the close series is decomposed and `M0..M{k-1}` columns
    /// become available as features.
    pub vmd: Option<VmdConfig>,
}

/// Names of the decomposition-mode feature columns.
pub fn mode_names(k: usize) -> Vec<String> {
    (0..k).map(|m| format!("M{m}")).collect()
}

impl ExperimentSpec {
    /// The ten catalogued experiments. 1-6 ablate raw feature subsets, 7-8
    /// add or isolate decomposition modes, 9-10 turn on baseline ensembling
    /// (10 also truncates the data to end of 2020).
    pub fn builtin(id: u32) -> Result<ExperimentSpec> {
        fn strings(names: &[&str]) -> Vec<String> {
            names.iter().map(|s| s.to_string()).collect()
        }
        let all = strings(&SERIES_NAMES);
        let with_modes = {
            let mut f = all.clone();
            f.extend(mode_names(11));
            f
        };
        let mut spec = ExperimentSpec {
            id,
            feature_set: Vec::new(),
            models: ModelKind::ALL.to_vec(),
            date_range: (None, None),
            ensemble: false,
            vmd: None,
        };
        match id {
            1 => spec.feature_set = strings(&["Close", "Open", "High", "Low", "Volume"]),
            2 => spec.feature_set = all,
            3 => spec.feature_set = strings(&["Open", "High", "Low"]),
            4 => spec.feature_set = strings(&["High", "Low"]),
            5 => spec.feature_set = strings(&["Low"]),
            6 => spec.feature_set = strings(&["Open", "Low"]),
            7 => {
                spec.feature_set = with_modes;
                spec.vmd = Some(VmdConfig::default());
            }
            8 => {
                spec.feature_set = mode_names(11);
                spec.vmd = Some(VmdConfig::default());
            }
            9 => {
                spec.feature_set = strings(&["Open", "High", "Low"]);
                spec.ensemble = true;
            }
            10 => {
                spec.feature_set = with_modes;
                spec.vmd = Some(VmdConfig::default());
                spec.ensemble = true;
                spec.date_range = (None, NaiveDate::from_ymd_opt(2021, 1, 1));
            }
            other => {
                return Err(Error::validation(format!(
                    "experiment id must be 1..=10, got {other}"
                )))
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=10).contains(&self.id) {
            return Err(Error::validation(format!(
                "experiment id must be 1..=10, got {}",
                self.id
            )));
        }
        if self.feature_set.is_empty() {
            return Err(Error::validation("feature_set must not be empty"));
        }
        for (i, name) in self.feature_set.iter().enumerate() {
            if self.feature_set[..i].contains(name) {
                return Err(Error::validation(format!("duplicate feature {name}")));
            }
        }
        if self.models.is_empty() {
            return Err(Error::validation("models must not be empty"));
        }
        for (i, kind) in self.models.iter().enumerate() {
            if self.models[..i].contains(kind) {
                return Err(Error::validation(format!("duplicate model {}", kind.name())));
            }
        }
        if let (Some(start), Some(end)) = self.date_range {
            if start > end {
                return Err(Error::validation(format!(
                    "date range starts {start} after it ends {end}"
                )));
            }
        }
        if let Some(vc) = &self.vmd {
            vc.validate()?;
        }
        let k = self.vmd.as_ref().map_or(0, |vc| vc.k);
        for name in &self.feature_set {
            if let Some(m) = parse_mode_name(name) {
                if self.vmd.is_none() {
                    return Err(Error::validation(format!(
                        "feature {name} needs a decomposition config"
                    )));
                }
                if m >= k {
                    return Err(Error::validation(format!(
                        "feature {name} out of range: only {k} modes configured"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stable serialized form hashed into the run digest.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("experiment spec serializes")
    }
}

fn parse_mode_name(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('M')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Loads a spec from a JSON file (same shape `builtin` produces).
pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let spec: ExperimentSpec = serde_json::from_str(&text)
        .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

/// Knobs that vary how a spec is executed without changing what it asks for.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Where to persist artifacts; `None` keeps the run in memory.
    pub runs_root: Option<PathBuf>,
    /// Fit the scaler on the full range instead of the training rows.
    pub scaler_fit_full: bool,
    /// Decompose causally (test rows see only their own past) instead of over
    /// the full series.
    pub causal_vmd: bool,
    pub ensemble_mode: EnsembleMode,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            runs_root: None,
            scaler_fit_full: false,
            causal_vmd: false,
            ensemble_mode: EnsembleMode::Price,
        }
    }
}

/// One model's outcome within a run. `metrics` is in scaled space (what the
/// networks are trained on); `metrics_unscaled` is in price space. A training
/// failure leaves both empty and records the error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelResult {
    pub name: String,
    pub metrics: Option<MetricsReport>,
    pub metrics_unscaled: Option<MetricsReport>,
    pub roi: Option<RoiReport>,
    pub error: Option<String>,
}

/// A completed (or partially failed) experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec: ExperimentSpec,
    pub seed: u64,
    pub code_version: String,
    /// sha256 over (canonical spec, seed, code version).
    pub digest: String,
    /// Actual bounds of the aligned rows the run used.
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub results: Vec<ModelResult>,
    /// (label, path relative to the run directory) for every persisted file.
    pub artifacts: Vec<(String, String)>,
    pub wall_clock_secs: f64,
}

/// Content address of a run: two invocations with the same spec, seed, and
/// build hash to the same value.
pub fn run_digest(spec: &ExperimentSpec, seed: u64) -> String {
    let mut hasher = Sha256::new();
    hasher.update(spec.canonical_json().as_bytes());
    hasher.update([0x1f]);
    hasher.update(seed.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(CODE_VERSION.as_bytes());
    hex::encode(hasher.finalize())
}

fn slice_windows(set: &WindowedSet, start: usize, end: usize) -> WindowedSet {
    WindowedSet {
        input_names: set.input_names.clone(),
        target_name: set.target_name.clone(),
        inputs: set.inputs.slice(s![start..end, .., ..]).to_owned(),
        targets: set.targets.slice(s![start..end]).to_owned(),
    }
}

fn restrict_dates(
    dataset: &AlignedDataset,
    range: (Option<NaiveDate>, Option<NaiveDate>),
) -> Result<AlignedDataset> {
    let n = dataset.num_rows();
    let lo = match range.0 {
        Some(start) => dataset.dates.partition_point(|d| *d < start),
        None => 0,
    };
    let hi = match range.1 {
        Some(end) => dataset.dates.partition_point(|d| *d <= end),
        None => n,
    };
    if lo >= hi {
        return Err(Error::insufficient(
            "date range selects no rows of the aligned dataset",
        ));
    }
    Ok(dataset.slice_rows(lo, hi))
}

fn trace_roi(predicted: &[f64], priors: &[f64], fvi_convention: &str) -> Result<RoiReport> {
    let per_step: Vec<f64> = predicted
        .iter()
        .zip(priors)
        .map(|(&fvi, &ivi)| roi(fvi, ivi))
        .collect::<Result<_>>()?;
    let mean = per_step.iter().sum::<f64>() / per_step.len() as f64;
    Ok(RoiReport {
        per_step,
        mean,
        ivi_convention: "IVI = last observed value (the baseline prediction)".into(),
        fvi_convention: fvi_convention.into(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value).expect("record serializes");
    fs::write(path, body).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Scaled and price-space traces for one successful model, plus where the
/// runner should file them.
struct ModelOutcome {
    scaled: ForecastTrace,
    raw: ForecastTrace,
    raw_unensembled: Option<ForecastTrace>,
    roi: RoiReport,
}

/// Executes one experiment end to end and persists its artifacts.
///
/// A network whose training diverges is recorded as failed and the run
/// continues; any other error aborts the run.
pub fn run_experiment(
    spec: &ExperimentSpec,
    dataset: &AlignedDataset,
    seed: u64,
    options: &RunOptions,
) -> Result<RunRecord> {
    spec.validate()?;
    let clock = Instant::now();
    let digest = run_digest(spec, seed);

    let mut table = restrict_dates(dataset, spec.date_range)?;
    let n = table.num_rows();
    // At least one training window: n − TEST_DAYS − WINDOW_LEN ≥ 1.
    if n <= TEST_DAYS + WINDOW_LEN {
        return Err(Error::insufficient(format!(
            "need more than {} rows for a {TEST_DAYS}-day test with {WINDOW_LEN}-day windows, got {n}",
            TEST_DAYS + WINDOW_LEN
        )));
    }
    let train_rows = n - TEST_DAYS;

    if let Some(vc) = &spec.vmd {
        let close = table.column("Close")?.to_vec();
        let result = if options.causal_vmd {
            decompose_causal(&close, train_rows, vc)?
        } else {
            decompose(&close, vc)?
        };
        for (m, name) in mode_names(vc.k).into_iter().enumerate() {
            table.push_column(name, result.modes.row(m).to_vec())?;
        }
    }
    for name in &spec.feature_set {
        table.column(name)?;
    }

    let scaler_input = if options.scaler_fit_full {
        table.clone()
    } else {
        table.slice_rows(0, train_rows)
    };
    let scaler = ScalerParams::fit(&scaler_input)?;
    let scaled = scaler.transform(&table)?;

    let feature_refs: Vec<&str> = spec.feature_set.iter().map(String::as_str).collect();
    let windows = make_windows_selected(&scaled, WINDOW_LEN, &feature_refs, "Close")?;
    let train_windows = slice_windows(&windows, 0, train_rows - WINDOW_LEN);
    let test_windows = slice_windows(&windows, train_rows - WINDOW_LEN, n - WINDOW_LEN);

    let test_dates = table.dates[train_rows..].to_vec();
    let close_raw = table.column("Close")?.to_vec();
    let close_scaled = scaled.column("Close")?.to_vec();
    // One value per test day, plus the observation immediately before it.
    let actual_raw = &close_raw[train_rows - 1..];
    let actual_scaled = &close_scaled[train_rows - 1..];
    let priors_raw = &close_raw[train_rows - 1..n - 1];

    let run_dir = options.runs_root.as_ref().map(|root| root.join(&digest));
    if let Some(dir) = &run_dir {
        ensure_dir(&dir.join("traces"))?;
        ensure_dir(&dir.join("checkpoints"))?;
    }
    let mut artifacts: Vec<(String, String)> = Vec::new();

    let mut models = spec.models.clone();
    if !models.contains(&ModelKind::Baseline) {
        models.push(ModelKind::Baseline);
    }

    let mut results = Vec::with_capacity(models.len());
    for kind in models {
        let name = kind.name();
        let outcome: Result<ModelOutcome> = (|| {
            let (scaled_trace, raw_pred) = match kind {
                ModelKind::Baseline => {
                    let pred_scaled = baseline_forecast(actual_scaled)?;
                    let pred_raw = baseline_forecast(actual_raw)?;
                    let trace = ForecastTrace::new(
                        test_dates.clone(),
                        actual_scaled[1..].to_vec(),
                        pred_scaled,
                        name,
                    )?;
                    (trace, pred_raw)
                }
                ModelKind::Gbt => {
                    let lag = make_windows_selected(&scaled, 1, &feature_refs, "Close")?;
                    if train_rows <= GBT_HOLDOUT + 1 {
                        return Err(Error::insufficient(format!(
                            "tree training needs more than {} training rows, got {train_rows}",
                            GBT_HOLDOUT + 1
                        )));
                    }
                    let fit = slice_windows(&lag, 0, train_rows - 1 - GBT_HOLDOUT);
                    let hold = slice_windows(&lag, train_rows - 1 - GBT_HOLDOUT, train_rows - 1);
                    let test = slice_windows(&lag, train_rows - 1, n - 1);

                    let fit_x = fit.flattened_inputs();
                    let hold_x = hold.flattened_inputs();
                    let config = GbtConfig { seed, ..GbtConfig::default() };
                    let booster = gbt_train(
                        &config,
                        &fit_x,
                        fit.targets.as_slice().expect("contiguous targets"),
                        Some((&hold_x, hold.targets.as_slice().expect("contiguous targets"))),
                    )?;

                    if let Some(dir) = &run_dir {
                        booster.save_text(&dir.join("checkpoints").join("GBT.txt"))?;
                        artifacts.push(("booster:GBT".into(), "checkpoints/GBT.txt".into()));
                        let importance = feature_importance(&booster);
                        importance
                            .write_csv(&dir.join("importance.csv"), &spec.feature_set)?;
                        artifacts.push(("importance:GBT".into(), "importance.csv".into()));
                    }

                    let trace = rolling_forecast(&booster, &test, &test_dates)?;
                    let raw_pred = scaler.inverse("Close", &trace.predicted)?;
                    (trace, raw_pred)
                }
                _ => {
                    let arch = kind.architecture().expect("network kinds carry one");
                    let net = NetworkSpec {
                        seed,
                        ..NetworkSpec::for_architecture(arch)
                    };
                    let model = train_network(&net, &train_windows)?;

                    if let Some(dir) = &run_dir {
                        let ckpt = format!("checkpoints/{name}.ckpt");
                        model.save(&dir.join(&ckpt))?;
                        artifacts.push((format!("checkpoint:{name}"), ckpt));
                        let loss = format!("checkpoints/{name}.loss.csv");
                        write_loss_history_csv(&dir.join(&loss), &model.loss_history)?;
                        artifacts.push((format!("loss:{name}"), loss));
                    }

                    let trace = rolling_forecast(&model, &test_windows, &test_dates)?;
                    let raw_pred = scaler.inverse("Close", &trace.predicted)?;
                    (trace, raw_pred)
                }
            };

            let raw_trace = ForecastTrace::new(
                test_dates.clone(),
                actual_raw[1..].to_vec(),
                raw_pred,
                name,
            )?;

            if spec.ensemble && kind != ModelKind::Baseline {
                let (ens_raw, roi_report) =
                    ensemble_with_baseline(&raw_trace, actual_raw, options.ensemble_mode)?;
                let ens_scaled_pred: Vec<f64> = ens_raw
                    .predicted
                    .iter()
                    .map(|&v| scaler.scale_value("Close", v))
                    .collect::<Result<_>>()?;
                let ens_scaled = ForecastTrace::new(
                    test_dates.clone(),
                    actual_scaled[1..].to_vec(),
                    ens_scaled_pred,
                    ens_raw.model.clone(),
                )?;
                Ok(ModelOutcome {
                    scaled: ens_scaled,
                    raw: ens_raw,
                    raw_unensembled: Some(raw_trace),
                    roi: roi_report,
                })
            } else {
                let roi_report = trace_roi(&raw_trace.predicted, priors_raw, "FVI = predicted value")?;
                Ok(ModelOutcome {
                    scaled: scaled_trace,
                    raw: raw_trace,
                    raw_unensembled: None,
                    roi: roi_report,
                })
            }
        })();

        match outcome {
            Ok(out) => {
                if let Some(dir) = &run_dir {
                    let price = format!("traces/{name}.csv");
                    out.raw.write_csv(&dir.join(&price))?;
                    artifacts.push((format!("trace:{name}"), price));
                    let scaled_path = format!("traces/{name}.scaled.csv");
                    out.scaled.write_csv(&dir.join(&scaled_path))?;
                    artifacts.push((format!("trace:{name}:scaled"), scaled_path));
                    if let Some(unens) = &out.raw_unensembled {
                        let raw_path = format!("traces/{name}.unensembled.csv");
                        unens.write_csv(&dir.join(&raw_path))?;
                        artifacts.push((format!("trace:{name}:unensembled"), raw_path));
                    }
                }
                results.push(ModelResult {
                    name: name.to_string(),
                    metrics: Some(metrics(&out.scaled)?),
                    metrics_unscaled: Some(metrics(&out.raw)?),
                    roi: Some(out.roi),
                    error: None,
                });
            }
            Err(Error::Training { epoch, batch, message }) => {
                results.push(ModelResult {
                    name: name.to_string(),
                    metrics: None,
                    metrics_unscaled: None,
                    roi: None,
                    error: Some(format!(
                        "training failed at epoch {epoch}, batch {batch}: {message}"
                    )),
                });
            }
            Err(other) => return Err(other),
        }
    }

    let mut record = RunRecord {
        spec: spec.clone(),
        seed,
        code_version: CODE_VERSION.to_string(),
        digest,
        start_date: table.dates[0],
        end_date: table.dates[n - 1],
        results,
        artifacts,
        wall_clock_secs: clock.elapsed().as_secs_f64(),
    };

    if let Some(dir) = &run_dir {
        write_json(
            &dir.join("spec.json"),
            &serde_json::json!({
                "spec": record.spec,
                "seed": record.seed,
                "code_version": record.code_version,
            }),
        )?;
        record.artifacts.push(("spec".into(), "spec.json".into()));
        let report = emit_report(std::slice::from_ref(&record), ReportFormat::Csv);
        fs::write(dir.join("report.csv"), report).map_err(|source| Error::Io {
            path: dir.join("report.csv").display().to_string(),
            source,
        })?;
        record.artifacts.push(("report".into(), "report.csv".into()));
        record.artifacts.push(("run".into(), "run.json".into()));
        record.wall_clock_secs = clock.elapsed().as_secs_f64();
        write_json(&dir.join("run.json"), &record)?;
    }

    Ok(record)
}

/// Loads every persisted run under `root`, ordered by (experiment, seed).
pub fn load_runs(root: &Path) -> Result<Vec<RunRecord>> {
    let entries = fs::read_dir(root).map_err(|source| Error::Io {
        path: root.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| Error::Io {
            path: root.display().to_string(),
            source,
        })?;
        let run_json = entry.path().join("run.json");
        if !run_json.is_file() {
            continue;
        }
        let text = fs::read_to_string(&run_json).map_err(|source| Error::Io {
            path: run_json.display().to_string(),
            source,
        })?;
        let record: RunRecord = serde_json::from_str(&text)
            .map_err(|e| Error::Decode(format!("{}: {e}", run_json.display())))?;
        records.push(record);
    }
    records.sort_by(|a, b| {
        (a.spec.id, a.seed, &a.digest).cmp(&(b.spec.id, b.seed, &b.digest))
    });
    Ok(records)
}

/// Relative directional-accuracy improvement of every successful model over
/// the baseline, in percent: (DA_model − DA_base)/DA_base · 100.
pub fn compare_to_baseline(record: &RunRecord) -> Result<Vec<(String, f64)>> {
    let base = record
        .results
        .iter()
        .find(|r| r.name == "Baseline")
        .and_then(|r| r.metrics)
        .ok_or_else(|| Error::validation("run has no successful baseline to compare against"))?;
    if base.da == 0.0 {
        return Err(Error::validation(
            "baseline directional accuracy is zero; relative improvement undefined",
        ));
    }
    Ok(record
        .results
        .iter()
        .filter(|r| r.name != "Baseline")
        .filter_map(|r| {
            r.metrics
                .map(|m| (r.name.clone(), (m.da - base.da) / base.da * 100.0))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Table,
}

impl ReportFormat {
    pub fn parse(name: &str) -> Result<ReportFormat> {
        match name.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "table" => Ok(ReportFormat::Table),
            other => Err(Error::validation(format!("unknown report format {other}"))),
        }
    }
}

const REPORT_HEADER: &str = "experiment,seed,model,status,mae,mse,rmse,da,n,flags";
const METRIC_COLUMNS: [&str; 4] = ["mae", "mse", "rmse", "da"];

/// Which metric columns each row wins; ties flag every winner. Lower is
/// better except directional accuracy.
fn best_flags(results: &[ModelResult]) -> Vec<Vec<&'static str>> {
    let mut flags = vec![Vec::new(); results.len()];
    for (c, column) in METRIC_COLUMNS.iter().enumerate() {
        let value = |m: &MetricsReport| match c {
            0 => m.mae,
            1 => m.mse,
            2 => m.rmse,
            _ => m.da,
        };
        let candidates: Vec<(usize, f64)> = results
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.metrics.as_ref().map(|m| (i, value(m))))
            .collect();
        let higher_is_better = c == 3;
        let best = candidates.iter().map(|&(_, v)| v).reduce(|a, b| {
            if higher_is_better == (b > a) {
                b
            } else {
                a
            }
        });
        if let Some(best) = best {
            for (i, v) in candidates {
                if v == best {
                    flags[i].push(*column);
                }
            }
        }
    }
    flags
}

/// Renders run results. The CSV form round-trips exactly through
/// [`parse_report_csv`]; the table form is for terminals.
pub fn emit_report(records: &[RunRecord], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from(REPORT_HEADER);
            out.push('\n');
            for record in records {
                let flags = best_flags(&record.results);
                for (result, flag) in record.results.iter().zip(&flags) {
                    match &result.metrics {
                        Some(m) => {
                            let _ = writeln!(
                                out,
                                "{},{},{},ok,{:?},{:?},{:?},{:?},{},{}",
                                record.spec.id,
                                record.seed,
                                result.name,
                                m.mae,
                                m.mse,
                                m.rmse,
                                m.da,
                                m.n,
                                flag.join(";")
                            );
                        }
                        None => {
                            let _ = writeln!(
                                out,
                                "{},{},{},FAILED,,,,,,",
                                record.spec.id, record.seed, result.name
                            );
                        }
                    }
                }
            }
            out
        }
        ReportFormat::Table => {
            let mut out = String::new();
            for record in records {
                let _ = writeln!(
                    out,
                    "Experiment {} (seed {}, {} to {}){}",
                    record.spec.id,
                    record.seed,
                    record.start_date,
                    record.end_date,
                    if record.spec.ensemble {
                        ", baseline-ensembled"
                    } else {
                        ""
                    }
                );
                let _ = writeln!(
                    out,
                    "{:<10} {:>12} {:>12} {:>12} {:>9}",
                    "model", "MAE", "MSE", "RMSE", "DA"
                );
                let flags = best_flags(&record.results);
                for (result, flag) in record.results.iter().zip(&flags) {
                    match &result.metrics {
                        Some(m) => {
                            let cell = |v: f64, col: &str| {
                                let mark = if flag.iter().any(|f| *f == col) { "*" } else { " " };
                                format!("{v:.6}{mark}")
                            };
                            let _ = writeln!(
                                out,
                                "{:<10} {:>12} {:>12} {:>12} {:>9}",
                                result.name,
                                cell(m.mae, "mae"),
                                cell(m.mse, "mse"),
                                cell(m.rmse, "rmse"),
                                cell(m.da, "da"),
                            );
                        }
                        None => {
                            let _ = writeln!(out, "{:<10} {:>12}", result.name, "FAILED");
                        }
                    }
                }
                if let Ok(improvements) = compare_to_baseline(record) {
                    if !improvements.is_empty() {
                        let body = improvements
                            .iter()
                            .map(|(name, pct)| format!("{name} {pct:+.2}%"))
                            .collect::<Vec<_>>()
                            .join(", ");
                        let _ = writeln!(
                            out,
                            "DA vs baseline (from unrounded accuracies): {body}"
                        );
                    }
                }
                out.push('\n');
            }
            out
        }
    }
}

/// One parsed CSV report row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub experiment: u32,
    pub seed: u64,
    pub model: String,
    pub metrics: Option<MetricsReport>,
    pub flags: Vec<String>,
}

/// Parses [`emit_report`]'s CSV output; metric values round-trip exactly.
pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == REPORT_HEADER => {}
        other => {
            return Err(Error::Decode(format!(
                "bad report header: {:?}",
                other.unwrap_or_default()
            )))
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::Decode(format!(
                "report line {}: expected 10 fields, got {}",
                idx + 2,
                fields.len()
            )));
        }
        let parse_u = |s: &str, what: &str| -> Result<u64> {
            s.parse()
                .map_err(|_| Error::Decode(format!("report line {}: bad {what} {s:?}", idx + 2)))
        };
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Decode(format!("report line {}: bad {what} {s:?}", idx + 2)))
        };
        let metrics = match fields[3] {
            "ok" => Some(MetricsReport {
                mae: parse_f(fields[4], "mae")?,
                mse: parse_f(fields[5], "mse")?,
                rmse: parse_f(fields[6], "rmse")?,
                da: parse_f(fields[7], "da")?,
                n: parse_u(fields[8], "n")? as usize,
            }),
            "FAILED" => None,
            other => {
                return Err(Error::Decode(format!(
                    "report line {}: bad status {other:?}",
                    idx + 2
                )))
            }
        };
        rows.push(ReportRow {
            experiment: parse_u(fields[0], "experiment")? as u32,
            seed: parse_u(fields[1], "seed")?,
            model: fields[2].to_string(),
            metrics,
            flags: if fields[9].is_empty() {
                Vec::new()
            } else {
                fields[9].split(';').map(str::to_string).collect()
            },
        });
    }
    Ok(rows)
}

/// Convenience wrapper: render and write to a file.
pub fn write_report(records: &[RunRecord], format: ReportFormat, path: &Path) -> Result<()> {
    fs::write(path, emit_report(records, format)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
