//! End-to-end checks of the `btclab` binary: ingest, decompose, run, report,
//! and fetch against a local mock exchange, all inside temp directories.

use std::fs;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_btclab")
}

fn run(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let Output { status, stdout, stderr } = Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn btclab");
    (
        status.code().unwrap_or(-1),
        String::from_utf8_lossy(&stdout).into_owned(),
        String::from_utf8_lossy(&stderr).into_owned(),
    )
}

fn write_series(dir: &Path, file: &str, rows: usize, value: impl Fn(usize) -> f64) {
    let start = chrono::NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
    let mut body = String::from("date,value\n");
    for t in 0..rows {
        let date = start + chrono::Days::new(t as u64);
        body.push_str(&format!("{date},{:?}\n", value(t)));
    }
    fs::write(dir.join(file), body).unwrap();
}

/// A five-series OHLCV market: 140 daily rows, except volume stops a day
/// early so alignment has something to trim (139 common rows).
fn make_market(dir: &Path) -> PathBuf {
    let close = |t: usize| 100.0 + 20.0 * (t as f64 / 9.0).sin() + 0.3 * t as f64;
    write_series(dir, "close.csv", 140, close);
    write_series(dir, "open.csv", 140, |t| close(t) * 0.995);
    write_series(dir, "high.csv", 140, |t| close(t) * 1.03);
    write_series(dir, "low.csv", 140, |t| close(t) * 0.96);
    write_series(dir, "volume.csv", 139, |t| 1000.0 + 10.0 * t as f64);
    let manifest = dir.join("manifest.csv");
    fs::write(
        &manifest,
        "name,path\nClose,close.csv\nOpen,open.csv\nHigh,high.csv\nLow,low.csv\nVolume,volume.csv\n",
    )
    .unwrap();
    manifest
}

#[test]
fn ingest_aligns_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_market(dir.path());
    let root = dir.path().join("data");

    let (code, out, err) = run(
        dir.path(),
        &["--data-root", root.to_str().unwrap(), "ingest", "--manifest", manifest.to_str().unwrap()],
    );
    assert_eq!(code, 0, "stderr: {err}");
    assert!(out.contains("aligned 5 columns over 139 rows"), "stdout: {out}");

    // One provenance digest per loaded file.
    let digests = out
        .lines()
        .filter(|l| l.trim_start().split_whitespace().next().is_some_and(|w| {
            w.len() == 64 && w.chars().all(|c| c.is_ascii_hexdigit())
        }))
        .count();
    assert_eq!(digests, 5);

    for name in ["close", "open", "high", "low", "volume"] {
        let snapshot = root.join("aligned").join(format!("{name}.csv"));
        let text = fs::read_to_string(&snapshot).unwrap();
        assert_eq!(text.lines().count(), 140, "{name}: header + 139 aligned rows");
        assert!(text.starts_with("date,value\n2023-01-01,"));
    }
}

#[test]
fn decompose_writes_the_modes_table() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_market(dir.path());
    let out_path = dir.path().join("bands").join("modes.csv");

    let (code, out, err) = run(
        dir.path(),
        &[
            "--data-root", dir.path().join("data").to_str().unwrap(),
            "decompose",
            "--manifest", manifest.to_str().unwrap(),
            "--k", "3",
            "--alpha", "2000",
            "--out", out_path.to_str().unwrap(),
        ],
    );
    assert_eq!(code, 0, "stderr: {err}");
    assert!(out.contains("into 3 modes"), "stdout: {out}");
    assert!(out.contains("M2: center frequency"), "stdout: {out}");

    let text = fs::read_to_string(&out_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("date,M0,M1,M2"));
    assert_eq!(lines.count(), 139);
}

#[test]
fn run_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_market(dir.path());
    let root = dir.path().join("data");
    let root_s = root.to_str().unwrap();

    let run_args = [
        "--data-root", root_s,
        "run",
        "--experiment", "1",
        "--models", "baseline",
        "--manifest", manifest.to_str().unwrap(),
    ];
    let (code, out, err) = run(dir.path(), &run_args);
    assert_eq!(code, 0, "stderr: {err}");
    assert!(out.contains("Experiment 1 (seed 42"), "stdout: {out}");

    let digest = out
        .lines()
        .find_map(|l| l.strip_prefix("digest: "))
        .expect("digest line")
        .to_string();
    assert_eq!(digest.len(), 64);
    let run_dir = root.join("runs").join(&digest);
    for artifact in ["run.json", "report.csv", "spec.json", "traces/Baseline.csv"] {
        assert!(run_dir.join(artifact).is_file(), "missing {artifact}");
    }

    // Re-running the identical experiment lands on the same digest, so the
    // report still sees exactly one run.
    let (code, rerun_out, _) = run(dir.path(), &run_args);
    assert_eq!(code, 0);
    assert!(rerun_out.contains(&digest));

    let (code, csv, err) = run(dir.path(), &["--data-root", root_s, "report", "--format", "csv"]);
    assert_eq!(code, 0, "stderr: {err}");
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("experiment,seed,model,status,mae,mse,rmse,da,n,flags")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 1, "one run, one model: {rows:?}");
    assert!(rows[0].starts_with("1,42,Baseline,ok,"), "row: {}", rows[0]);

    let table_path = dir.path().join("report.txt");
    let (code, out, _) = run(
        dir.path(),
        &[
            "--data-root", root_s,
            "report",
            "--out", table_path.to_str().unwrap(),
        ],
    );
    assert_eq!(code, 0);
    assert!(out.contains("report:"));
    let table = fs::read_to_string(&table_path).unwrap();
    assert!(table.contains("Experiment 1 (seed 42"), "table: {table}");
    assert!(table.contains("Baseline"), "table: {table}");
}

#[test]
fn run_accepts_a_spec_file_and_date_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_market(dir.path());
    let spec_path = dir.path().join("spec.json");
    fs::write(
        &spec_path,
        r#"{
            "id": 4,
            "feature_set": ["Close", "Open"],
            "models": ["Baseline"],
            "date_range": [null, "2023-05-10"],
            "ensemble": false,
            "vmd": null
        }"#,
    )
    .unwrap();

    let (code, out, err) = run(
        dir.path(),
        &[
            "--data-root", dir.path().join("data").to_str().unwrap(),
            "run",
            "--spec", spec_path.to_str().unwrap(),
            "--seed", "7",
            "--manifest", manifest.to_str().unwrap(),
        ],
    );
    assert_eq!(code, 0, "stderr: {err}");
    assert!(out.contains("Experiment 4 (seed 7, 2023-01-01 to 2023-05-10)"), "stdout: {out}");
}

#[test]
fn fetch_snapshots_candles_from_a_local_endpoint() {
    // Exchange-shaped payload: the pair key is canonicalized (so the client
    // must fall back to it) and some numbers arrive as strings.
    let payload = concat!(
        r#"{"error":[],"result":{"XXBTZUSD":["#,
        r#"[1609459200,"29000.1",29600.0,28800.0,"29333.5",29100.0,"1200.5",100],"#,
        r#"[1609545600,29333.5,30200.0,29000.0,30100.0,29800.0,900.25,90],"#,
        r#"[1609632000,30100.0,31000.0,29900.0,30900.0,30500.0,1100.0,80]"#,
        r#"],"last":1609632000}}"#
    );
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    let server = std::thread::spawn(move || {
        let (mut sock, _) = listener.accept().unwrap();
        let mut request = Vec::new();
        let mut byte = [0u8; 1];
        while !request.ends_with(b"\r\n\r\n") && sock.read(&mut byte).unwrap() == 1 {
            request.push(byte[0]);
        }
        let request = String::from_utf8_lossy(&request).into_owned();
        let response = format!(
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\n\
             Content-Length: {}\r\nConnection: close\r\n\r\n{}",
            payload.len(),
            payload
        );
        sock.write_all(response.as_bytes()).unwrap();
        request
    });

    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let (code, out, err) = run(
        dir.path(),
        &[
            "--data-root", root.to_str().unwrap(),
            "fetch",
            "--endpoint", &format!("http://127.0.0.1:{port}/ohlc"),
            "--pair", "XBTUSD",
        ],
    );
    let request = server.join().unwrap();
    assert!(request.starts_with("GET /ohlc?pair=XBTUSD&interval=1440 "), "request: {request}");
    assert_eq!(code, 0, "stderr: {err}");
    for field in ["Close", "Open", "High", "Low", "Volume"] {
        assert!(out.contains(&format!("{field}: 3 rows")), "stdout: {out}");
    }

    let close = fs::read_to_string(root.join("fetched").join("close.csv")).unwrap();
    assert_eq!(close, "date,value\n2021-01-01,29333.5\n2021-01-02,30100.0\n2021-01-03,30900.0\n");
    let volume = fs::read_to_string(root.join("fetched").join("volume.csv")).unwrap();
    assert!(volume.contains("2021-01-02,900.25\n"), "volume: {volume}");
}

#[test]
fn env_var_supplies_the_data_root() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_market(dir.path());
    let root = dir.path().join("from-env");

    let output = Command::new(bin())
        .args(["ingest", "--manifest", manifest.to_str().unwrap()])
        .env("BTCLAB_DATA_ROOT", &root)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(root.join("aligned").join("close.csv").is_file());
}

#[test]
fn bad_invocations_fail_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let root_s = root.to_str().unwrap();
    let manifest = make_market(dir.path());

    // Missing manifest file.
    let (code, _, err) = run(
        dir.path(),
        &["--data-root", root_s, "ingest", "--manifest", "no-such-file.csv"],
    );
    assert_eq!(code, 1);
    assert!(err.contains("error:"), "stderr: {err}");

    // Run needs a spec source.
    let (code, _, err) = run(
        dir.path(),
        &["--data-root", root_s, "run", "--manifest", manifest.to_str().unwrap()],
    );
    assert_eq!(code, 1);
    assert!(err.contains("--experiment"), "stderr: {err}");

    // clap rejects --experiment together with --spec before we run anything.
    let (code, _, err) = run(
        dir.path(),
        &[
            "--data-root", root_s,
            "run",
            "--experiment", "1",
            "--spec", "spec.json",
            "--manifest", manifest.to_str().unwrap(),
        ],
    );
    assert_eq!(code, 2, "stderr: {err}");

    // Unknown model name.
    let (code, _, err) = run(
        dir.path(),
        &[
            "--data-root", root_s,
            "run",
            "--experiment", "1",
            "--models", "Perceptron",
            "--manifest", manifest.to_str().unwrap(),
        ],
    );
    assert_eq!(code, 1);
    assert!(err.contains("Perceptron"), "stderr: {err}");

    // Report over an empty runs directory.
    fs::create_dir_all(root.join("runs")).unwrap();
    let (code, _, err) = run(dir.path(), &["--data-root", root_s, "report"]);
    assert_eq!(code, 1);
    assert!(err.contains("no runs found"), "stderr: {err}");
}
