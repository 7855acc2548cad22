//! Backtest evaluation: rolling one-step-ahead traces, error metrics,
//! directional accuracy, ROI, the lag-1 baseline, and baseline ensembling.

use crate::error::{Error, Result};
use crate::gbt::{gbt_predict, Booster};
use crate::neural::TrainedModel;
use crate::preprocess::WindowedSet;
use chrono::NaiveDate;
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// One model's predictions over a test segment, aligned by date.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastTrace {
    pub dates: Vec<NaiveDate>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
    pub model: String,
}

impl ForecastTrace {
    pub fn new(
        dates: Vec<NaiveDate>,
        actual: Vec<f64>,
        predicted: Vec<f64>,
        model: impl Into<String>,
    ) -> Result<ForecastTrace> {
        if dates.len() != actual.len() || actual.len() != predicted.len() {
            return Err(Error::validation(format!(
                "trace lengths differ: {} dates, {} actual, {} predicted",
                dates.len(),
                actual.len(),
                predicted.len()
            )));
        }
        if actual.len() < 2 {
            return Err(Error::validation("trace needs at least 2 points"));
        }
        Ok(ForecastTrace {
            dates,
            actual,
            predicted,
            model: model.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.actual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actual.is_empty()
    }

    /// Writes `date,actual,predicted,model` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut body = String::from("date,actual,predicted,model\n");
        for i in 0..self.len() {
            let _ = writeln!(
                body,
                "{},{:?},{:?},{}",
                self.dates[i], self.actual[i], self.predicted[i], self.model
            );
        }
        fs::write(path, body).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// The four error measures over a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    /// Fraction of directional hits in [0, 1].
    pub da: f64,
    pub n: usize,
}

/// Per-step returns on investment of an ensembled trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiReport {
    /// Percentages, one per trace step.
    pub per_step: Vec<f64>,
    pub mean: f64,
    pub ivi_convention: String,
    pub fvi_convention: String,
}

/// Lag-1 baseline: the prediction for step t is the value observed at t−1.
/// Output has length n−1, aligned to targets 2..n.
pub fn baseline_forecast(actual: &[f64]) -> Result<Vec<f64>> {
    if actual.len() < 2 {
        return Err(Error::validation(format!(
            "baseline needs ≥ 2 observations, got {}",
            actual.len()
        )));
    }
    Ok(actual[..actual.len() - 1].to_vec())
}

/// Anything that maps window batches to one prediction per window.
pub trait Predictor {
    fn predict_windows(&self, inputs: &Array3<f64>) -> Result<Vec<f64>>;
    fn label(&self) -> String;
}

impl Predictor for TrainedModel {
    fn predict_windows(&self, inputs: &Array3<f64>) -> Result<Vec<f64>> {
        Ok(self.predict(inputs)?.to_vec())
    }

    fn label(&self) -> String {
        self.spec.architecture.name().to_string()
    }
}

impl Predictor for Booster {
    fn predict_windows(&self, inputs: &Array3<f64>) -> Result<Vec<f64>> {
        let (n, w, f) = inputs.dim();
        let flat = inputs
            .to_shape((n, w * f))
            .map_err(|e| Error::validation(format!("windows not flattenable: {e}")))?
            .to_owned();
        gbt_predict(self, &flat)
    }

    fn label(&self) -> String {
        "GBT".to_string()
    }
}

/// One-step-ahead backtest: each test window already contains only true
/// observed history, so predicting every window once is the rolling forecast.
pub fn rolling_forecast(
    model: &dyn Predictor,
    test: &WindowedSet,
    dates: &[NaiveDate],
) -> Result<ForecastTrace> {
    if test.num_windows() == 0 {
        return Err(Error::validation("rolling forecast needs a non-empty test set"));
    }
    if dates.len() != test.num_windows() {
        return Err(Error::validation(format!(
            "{} test windows but {} target dates",
            test.num_windows(),
            dates.len()
        )));
    }
    let predicted = model.predict_windows(&test.inputs)?;
    ForecastTrace::new(
        dates.to_vec(),
        test.targets.to_vec(),
        predicted,
        model.label(),
    )
}

/// MAE, MSE, RMSE over all n points; directional accuracy over t = 2..n with
/// ties ((x_t−x_{t−1})(y_t−y_{t−1}) = 0) counting as hits.
pub fn metrics(trace: &ForecastTrace) -> Result<MetricsReport> {
    let n = trace.len();
    if n < 2 {
        return Err(Error::validation(
            "metrics need ≥ 2 points to evaluate directional accuracy",
        ));
    }
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for (x, y) in trace.actual.iter().zip(&trace.predicted) {
        let err = y - x;
        abs_sum += err.abs();
        sq_sum += err * err;
    }
    let mae = abs_sum / n as f64;
    let mse = sq_sum / n as f64;
    let rmse = mse.sqrt();

    let mut hits = 0usize;
    for t in 1..n {
        let dx = trace.actual[t] - trace.actual[t - 1];
        let dy = trace.predicted[t] - trace.predicted[t - 1];
        if dx * dy >= 0.0 {
            hits += 1;
        }
    }
    let da = hits as f64 / (n - 1) as f64;

    Ok(MetricsReport { mae, mse, rmse, da, n })
}

/// Return on investment: (FVI − IVI)/IVI · 100.
pub fn roi(fvi: f64, ivi: f64) -> Result<f64> {
    if !(ivi > 0.0) {
        return Err(Error::validation(format!(
            "roi requires a positive initial value, got {ivi}"
        )));
    }
    Ok((fvi - ivi) / ivi * 100.0)
}

/// How ensemble averaging combines the model with the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EnsembleMode {
    /// Arithmetic mean of predicted price and the last observed price.
    #[default]
    Price,
    /// Mean in log-return space (geometric mean of the prices); the
    /// arithmetic-return reading collapses to `Price` exactly, so this is the
    /// only distinct return-space variant.
    LogReturn,
}

/// Averages a model's predictions with the lag-1 baseline. `actual` must be
/// the trace's actual vector with the one observation preceding it prepended
/// (index 0 is the value before the first prediction).
///
/// Per-step ROI uses IVI = the last observed value and FVI = the ensembled
/// prediction; call it on price-scale traces so IVI is positive.
pub fn ensemble_with_baseline(
    model_trace: &ForecastTrace,
    actual: &[f64],
    mode: EnsembleMode,
) -> Result<(ForecastTrace, RoiReport)> {
    let n = model_trace.len();
    if actual.len() != n + 1 {
        return Err(Error::validation(format!(
            "ensemble needs {} actual values (trace plus one prior), got {}",
            n + 1,
            actual.len()
        )));
    }
    if actual[1..] != model_trace.actual[..] {
        return Err(Error::validation(
            "ensemble misalignment: actual[1..] must equal the trace's actual values",
        ));
    }

    let mut predicted = Vec::with_capacity(n);
    let mut per_step = Vec::with_capacity(n);
    for t in 0..n {
        let prior = actual[t];
        let ens = match mode {
            EnsembleMode::Price => (model_trace.predicted[t] + prior) / 2.0,
            EnsembleMode::LogReturn => {
                if !(model_trace.predicted[t] > 0.0) {
                    return Err(Error::validation(format!(
                        "log-return ensemble needs positive predictions, got {} at step {t}",
                        model_trace.predicted[t]
                    )));
                }
                (model_trace.predicted[t] * prior).sqrt()
            }
        };
        predicted.push(ens);
        per_step.push(roi(ens, prior)?);
    }
    let mean = per_step.iter().sum::<f64>() / n as f64;

    let trace = ForecastTrace::new(
        model_trace.dates.clone(),
        model_trace.actual.clone(),
        predicted,
        format!("{}+Baseline", model_trace.model),
    )?;
    let report = RoiReport {
        per_step,
        mean,
        ivi_convention: "IVI = last observed value (the baseline prediction)".into(),
        fvi_convention: "FVI = ensembled prediction".into(),
    };
    Ok((trace, report))
}
