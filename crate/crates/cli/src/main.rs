//! `btclab`: ingest and align the feature series, fetch exchange candles,
//! decompose the close price into modes, run catalogued or custom
//! experiments, and render reports from persisted runs.

use btclab_core::data::{ingest_manifest, write_series_csv};
use btclab_core::experiments::{
    self, load_runs, load_spec, run_experiment, ExperimentSpec, ModelKind, ReportFormat,
    RunOptions, RunRecord,
};
use btclab_core::eval::EnsembleMode;
use btclab_core::vmd::{decompose, decompose_causal, write_modes_csv, VmdConfig};
use btclab_core::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "btclab", version, about = "Bitcoin price forecasting laboratory")]
struct Cli {
    /// Directory for aligned data, fetched snapshots, and run artifacts.
    #[arg(long, env = "BTCLAB_DATA_ROOT", default_value = "btclab-data", global = true)]
    data_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the series listed in a manifest, align them by date, and snapshot
    /// the aligned table under the data root.
    Ingest {
        /// CSV manifest: `name,path` rows, `-` for the derived moving average.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Download OHLC candles from an exchange-style endpoint and snapshot
    /// each field as a dated CSV.
    Fetch {
        /// Base URL queried as `{endpoint}?pair=..&interval=..`.
        #[arg(long)]
        endpoint: String,
        /// Asset pair symbol, e.g. XBTUSD.
        #[arg(long)]
        pair: String,
        /// Candle length in minutes.
        #[arg(long, default_value_t = 1440)]
        interval: u32,
    },
    /// Decompose the aligned close series into band-limited modes.
    Decompose {
        #[arg(long)]
        manifest: PathBuf,
        /// Number of modes.
        #[arg(long, default_value_t = 11)]
        k: usize,
        /// Bandwidth penalty.
        #[arg(long, default_value_t = 5000.0)]
        alpha: f64,
        /// Re-decompose per test day so no future sample leaks in; the final
        /// 90 rows are treated as the test segment.
        #[arg(long)]
        causal: bool,
        /// Output CSV (default: `<data-root>/modes.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and backtest one experiment, persisting artifacts under
    /// `<data-root>/runs/<digest>/`.
    Run(RunArgs),
    /// Render persisted runs as a table or a round-trippable CSV.
    Report {
        /// Runs directory (default: `<data-root>/runs`).
        #[arg(long)]
        runs: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = FormatArg::Table)]
        format: FormatArg,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Catalogued experiment id (1..=10).
    #[arg(long, conflicts_with = "spec")]
    experiment: Option<u32>,
    /// JSON experiment spec file (alternative to --experiment).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Restrict to a comma-separated model subset, e.g. GRU,GBT.
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    /// Fit the scaler over the full range instead of the training rows.
    #[arg(long)]
    scaler_fit_full: bool,
    /// Decompose causally instead of over the full series.
    #[arg(long)]
    causal_vmd: bool,
    /// How ensemble averaging combines a model with the baseline.
    #[arg(long, value_enum, default_value_t = EnsembleArg::Price)]
    ensemble_mode: EnsembleArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnsembleArg {
    Price,
    LogReturn,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest { manifest } => cmd_ingest(&cli.data_root, &manifest),
        Command::Fetch { endpoint, pair, interval } => {
            cmd_fetch(&cli.data_root, &endpoint, &pair, interval)
        }
        Command::Decompose { manifest, k, alpha, causal, out } => {
            cmd_decompose(&cli.data_root, &manifest, k, alpha, causal, out)
        }
        Command::Run(args) => cmd_run(&cli.data_root, args),
        Command::Report { runs, format, out } => cmd_report(&cli.data_root, runs, format, out),
    }
}

fn cmd_ingest(data_root: &PathBuf, manifest: &PathBuf) -> Result<ExitCode> {
    let dataset = ingest_manifest(manifest)?;
    let out_dir = data_root.join("aligned");
    std::fs::create_dir_all(&out_dir).map_err(|source| btclab_core::Error::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    for series in dataset.to_series() {
        let path = out_dir.join(format!("{}.csv", series.name.to_ascii_lowercase()));
        write_series_csv(&path, &series)?;
    }
    println!(
        "aligned {} columns over {} rows ({} to {})",
        dataset.num_columns(),
        dataset.num_rows(),
        dataset.dates[0],
        dataset.dates[dataset.num_rows() - 1]
    );
    for (path, digest) in &dataset.provenance {
        println!("  {digest}  {path}");
    }
    println!("snapshot: {}", out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_fetch(data_root: &PathBuf, endpoint: &str, pair: &str, interval: u32) -> Result<ExitCode> {
    let out_dir = data_root.join("fetched");
    let series = btclab_core::data::fetch_ohlc(endpoint, pair, interval, &out_dir)?;
    for s in &series {
        println!("{}: {} rows", s.name, s.len());
    }
    println!("snapshot: {}", out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_decompose(
    data_root: &PathBuf,
    manifest: &PathBuf,
    k: usize,
    alpha: f64,
    causal: bool,
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    let dataset = ingest_manifest(manifest)?;
    let close = dataset.column("Close")?;
    let config = VmdConfig { k, alpha, ..VmdConfig::default() };
    let result = if causal {
        let n = close.len();
        if n <= experiments::TEST_DAYS {
            return Err(btclab_core::Error::insufficient(format!(
                "causal decomposition needs more than {} rows, got {n}",
                experiments::TEST_DAYS
            )));
        }
        decompose_causal(close, n - experiments::TEST_DAYS, &config)?
    } else {
        decompose(close, &config)?
    };
    let out = out.unwrap_or_else(|| data_root.join("modes.csv"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| btclab_core::Error::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    write_modes_csv(&out, &dataset.dates, &result)?;
    println!(
        "decomposed {} samples into {k} modes in {} iterations (residual {:.3e})",
        close.len(),
        result.iterations,
        result.final_residual
    );
    for (m, omega) in result.omegas.iter().enumerate() {
        println!("  M{m}: center frequency {omega:.6} cycles/day");
    }
    println!("modes: {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(data_root: &PathBuf, args: RunArgs) -> Result<ExitCode> {
    let mut spec: ExperimentSpec = match (args.experiment, &args.spec) {
        (Some(id), None) => ExperimentSpec::builtin(id)?,
        (None, Some(path)) => load_spec(path)?,
        (None, None) => {
            return Err(btclab_core::Error::validation(
                "pass --experiment <1..=10> or --spec <file>",
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    };
    if !args.models.is_empty() {
        let mut models = Vec::new();
        for name in &args.models {
            let kind = ModelKind::parse(name)?;
            if !models.contains(&kind) {
                models.push(kind);
            }
        }
        spec.models = models;
    }
    spec.validate()?;

    let dataset = ingest_manifest(&args.manifest)?;
    let options = RunOptions {
        runs_root: Some(data_root.join("runs")),
        scaler_fit_full: args.scaler_fit_full,
        causal_vmd: args.causal_vmd,
        ensemble_mode: match args.ensemble_mode {
            EnsembleArg::Price => EnsembleMode::Price,
            EnsembleArg::LogReturn => EnsembleMode::LogReturn,
        },
    };
    let record = run_experiment(&spec, &dataset, args.seed, &options)?;

    print!("{}", experiments::emit_report(std::slice::from_ref(&record), ReportFormat::Table));
    println!("digest: {}", record.digest);
    println!(
        "artifacts: {}",
        data_root.join("runs").join(&record.digest).display()
    );
    println!("wall clock: {:.1}s", record.wall_clock_secs);

    let failed: Vec<&str> = record
        .results
        .iter()
        .filter(|r| r.error.is_some())
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("failed models: {}", failed.join(", "));
        Ok(ExitCode::from(2))
    }
}

fn cmd_report(
    data_root: &PathBuf,
    runs: Option<PathBuf>,
    format: FormatArg,
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    let runs_dir = runs.unwrap_or_else(|| data_root.join("runs"));
    let records: Vec<RunRecord> = load_runs(&runs_dir)?;
    if records.is_empty() {
        return Err(btclab_core::Error::insufficient(format!(
            "no runs found under {}",
            runs_dir.display()
        )));
    }
    let format = match format {
        FormatArg::Table => ReportFormat::Table,
        FormatArg::Csv => ReportFormat::Csv,
    };
    let rendered = experiments::emit_report(&records, format);
    match out {
        Some(path) => {
            std::fs::write(&path, rendered).map_err(|source| btclab_core::Error::Io {
                path: path.display().to_string(),
                source,
            })?;
            println!("report: {}", path.display());
        }
        None => print!("{rendered}"),
    }
    Ok(ExitCode::SUCCESS)
}
