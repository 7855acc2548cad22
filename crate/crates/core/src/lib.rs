//! Bitcoin price-forecasting laboratory.
//!
//! The pipeline runs in stages, one module per stage:
//!
//! * [`data`] — per-series CSV snapshots, exchange OHLC ingestion, date alignment.
//! * [`preprocess`] — train/test splitting, min-max scaling, sliding-window tensors.
//! * [`vmd`] — variational mode decomposition of the close series.
//! * [`neural`] — recurrent forecasters (GRU/LSTM stacks) trained from scratch.
//! * [`gbt`] — gradient-boosted trees with a Tweedie objective and split importances.
//! * [`eval`] — rolling one-step-ahead backtests, error metrics, baseline ensembling.
//! * [`experiments`] — the numbered feature-set experiments and run persistence.

pub mod data;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod gbt;
pub mod neural;
pub mod preprocess;
pub mod vmd;

pub use error::{Error, Result};
