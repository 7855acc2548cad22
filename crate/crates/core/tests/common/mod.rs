//! Helpers shared by the integration-test binaries.
#![allow(dead_code)]

use btclab_core::data::{ingest_manifest, AlignedDataset};
use btclab_core::gbt::GbtConfig;
use chrono::NaiveDate;
use ndarray::Array2;
use std::path::PathBuf;

/// Repository fixtures directory (committed synthetic market data).
pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("..")
        .join("..")
        .join("fixtures")
}

/// Loads the committed 13-column fixture dataset (718 aligned rows).
pub fn fixture_dataset() -> AlignedDataset {
    ingest_manifest(&fixtures_dir().join("manifest.csv")).expect("fixture manifest loads")
}

pub fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

/// `n` consecutive days starting 2024-01-01.
pub fn dates(n: usize) -> Vec<NaiveDate> {
    let start = date(2024, 1, 1);
    (0..n)
        .map(|i| start + chrono::Days::new(i as u64))
        .collect()
}

/// Independent best-split search for a depth-one squared-error tree: every
/// feature and boundary is scored from scratch (fresh left-sum per candidate
/// instead of a running prefix) with the same statistics, so the winning
/// `(feature, threshold, gain)` must agree with the trained tree bit for bit.
pub fn brute_force_root_split(
    features: &Array2<f64>,
    targets: &[f64],
    config: &GbtConfig,
) -> Option<(usize, f64, f64)> {
    let n = features.nrows();
    let mean = targets.iter().sum::<f64>() / n as f64;
    let grads: Vec<f64> = targets.iter().map(|y| mean - y).collect();
    let soft = |g: f64| g.signum() * (g.abs() - config.lambda_l1).max(0.0);
    let score = |g: f64, h: f64| {
        let t = soft(g);
        t * t / (h + config.lambda_l2)
    };

    let mut g_total = 0.0;
    for g in &grads {
        g_total += g;
    }
    let h_total = n as f64;
    let parent = score(g_total, h_total);

    let mut best: Option<(usize, f64, f64)> = None;
    for feature in 0..features.ncols() {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| features[[*a, feature]].total_cmp(&features[[*b, feature]]));
        for i in 0..n - 1 {
            let v = features[[order[i], feature]];
            let v_next = features[[order[i + 1], feature]];
            if v == v_next {
                continue;
            }
            if i + 1 < config.min_data_in_leaf || n - i - 1 < config.min_data_in_leaf {
                continue;
            }
            let mut g_left = 0.0;
            for &r in &order[..=i] {
                g_left += grads[r];
            }
            let h_left = (i + 1) as f64;
            let gain =
                score(g_left, h_left) + score(g_total - g_left, h_total - h_left) - parent;
            if gain <= 0.0 {
                continue;
            }
            if best.is_none_or(|(_, _, g)| gain > g) {
                let mid = v + (v_next - v) / 2.0;
                let threshold = if mid < v_next { mid } else { v };
                best = Some((feature, threshold, gain));
            }
        }
    }
    best
}
