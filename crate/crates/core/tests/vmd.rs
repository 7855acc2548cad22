//! Decomposition tests against an independent reference implementation's
//! frozen outputs, plus structural invariants and failure modes.

mod common;

use btclab_core::vmd::{
    decompose, decompose_causal, write_modes_csv, InitScheme, VmdConfig, VmdResult,
};
use btclab_core::Error;
use common::dates;
use std::f64::consts::PI;

fn two_tone(n: usize) -> Vec<f64> {
    (0..n)
        .map(|t| {
            let t = t as f64;
            (2.0 * PI * 0.04 * t).cos() + (2.0 * PI * 0.2 * t).cos()
        })
        .collect()
}

fn config(k: usize, alpha: f64) -> VmdConfig {
    VmdConfig {
        k,
        alpha,
        tau: 0.0,
        dc_mode: false,
        init: InitScheme::Uniform,
        tol: 1e-7,
        max_iter: 500,
        seed: 0,
    }
}

fn residual_energy_ratio(signal: &[f64], result: &VmdResult) -> f64 {
    let mut err = 0.0;
    let mut total = 0.0;
    for (i, v) in signal.iter().enumerate() {
        let rec: f64 = (0..result.modes.nrows()).map(|k| result.modes[[k, i]]).sum();
        err += (rec - v) * (rec - v);
        total += v * v;
    }
    err / total
}

/// Frozen reference run (numpy prototype, K=2, alpha=2000, tau=0, tol=1e-7):
/// omegas 0.04001792209596635 / 0.19986767203197833, 5 iterations, residual
/// energy ratio 2.9660033356853246e-3.
#[test]
fn two_tone_matches_reference_run() {
    let signal = two_tone(1024);
    let result = decompose(&signal, &config(2, 2000.0)).unwrap();
    assert_eq!(result.omegas.len(), 2);
    assert_eq!(result.modes.dim(), (2, 1024));
    assert_eq!(result.iterations, 5);
    assert!((result.omegas[0] - 0.04001792209596635).abs() < 1e-9, "{:?}", result.omegas);
    assert!((result.omegas[1] - 0.19986767203197833).abs() < 1e-9, "{:?}", result.omegas);
    let ratio = residual_energy_ratio(&signal, &result);
    assert!((ratio - 2.9660033356853246e-3).abs() < 1e-8, "{ratio:?}");
    assert!(result.final_residual < 1e-7);
}

/// The true spectral peaks of the two-tone signal sit on the FFT grid at
/// 41/1024 and 205/1024; recovered centers must land within 0.005.
#[test]
fn two_tone_centers_land_on_spectral_peaks() {
    let signal = two_tone(1024);
    let result = decompose(&signal, &config(2, 2000.0)).unwrap();
    let peaks = [41.0 / 1024.0, 205.0 / 1024.0];
    for (omega, peak) in result.omegas.iter().zip(peaks) {
        assert!((omega - peak).abs() < 0.005, "{omega} vs {peak}");
    }
}

#[test]
fn constant_signal_is_reproduced_by_one_mode() {
    let constant = vec![3.7; 512];
    let mut cfg = config(1, 2000.0);
    cfg.init = InitScheme::Zeros;
    let result = decompose(&constant, &cfg).unwrap();
    let max_dev = result
        .modes
        .row(0)
        .iter()
        .map(|v| (v - 3.7).abs())
        .fold(0.0f64, f64::max);
    assert!(max_dev < 1e-6, "max deviation {max_dev}");
    assert!(result.omegas[0].abs() < 1e-6);
}

/// Scaling the input scales the modes and leaves omegas unchanged, up to
/// float noise.
#[test]
fn decomposition_is_scale_equivariant() {
    let signal = two_tone(1024);
    let base = decompose(&signal, &config(2, 2000.0)).unwrap();
    let tripled: Vec<f64> = signal.iter().map(|v| 3.0 * v).collect();
    let scaled = decompose(&tripled, &config(2, 2000.0)).unwrap();
    for (a, b) in scaled.omegas.iter().zip(&base.omegas) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    let mut peak = 0.0f64;
    for v in base.modes.iter() {
        peak = peak.max(v.abs());
    }
    for (a, b) in scaled.modes.iter().zip(base.modes.iter()) {
        assert!((a - 3.0 * b).abs() < 1e-9 * peak.max(1.0), "{a} vs {}", 3.0 * b);
    }
}

#[test]
fn omegas_come_back_sorted_and_in_band() {
    let signal = two_tone(600);
    let result = decompose(&signal, &config(4, 2000.0)).unwrap();
    for pair in result.omegas.windows(2) {
        assert!(pair[0] <= pair[1], "omegas out of order: {:?}", result.omegas);
    }
    for omega in &result.omegas {
        assert!((0.0..=0.5).contains(omega), "omega {omega} out of band");
    }
}

#[test]
fn odd_length_signals_keep_their_length() {
    let signal = two_tone(257);
    let result = decompose(&signal, &config(2, 500.0)).unwrap();
    assert_eq!(result.modes.dim(), (2, 257));
}

#[test]
fn dc_mode_pins_the_first_center() {
    let signal: Vec<f64> = two_tone(512).iter().map(|v| v + 4.0).collect();
    let mut cfg = config(3, 2000.0);
    cfg.dc_mode = true;
    let result = decompose(&signal, &cfg).unwrap();
    assert_eq!(result.omegas[0], 0.0);
}

#[test]
fn random_init_is_seed_deterministic() {
    let signal = two_tone(512);
    let mut cfg = config(2, 2000.0);
    cfg.init = InitScheme::Random;
    cfg.seed = 9;
    let a = decompose(&signal, &cfg).unwrap();
    let b = decompose(&signal, &cfg).unwrap();
    for (x, y) in a.omegas.iter().zip(&b.omegas) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    for (x, y) in a.modes.iter().zip(b.modes.iter()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn config_validation_rejects_nonsense() {
    let signal = two_tone(64);
    for bad in [
        VmdConfig { k: 0, ..config(2, 2000.0) },
        VmdConfig { alpha: 0.0, ..config(2, 2000.0) },
        VmdConfig { tol: 0.0, ..config(2, 2000.0) },
        VmdConfig { max_iter: 0, ..config(2, 2000.0) },
    ] {
        assert!(matches!(decompose(&signal, &bad), Err(Error::Validation(_))));
    }
    assert!(matches!(
        decompose(&signal[..3], &config(2, 2000.0)),
        Err(Error::Validation(_))
    ));
    let mut with_nan = two_tone(64);
    with_nan[10] = f64::NAN;
    assert!(matches!(
        decompose(&with_nan, &config(2, 2000.0)),
        Err(Error::Validation(_))
    ));
}

/// The causal variant keeps the training prefix from the train-only pass and
/// fills each later sample from its own expanding-window decomposition.
#[test]
fn causal_decomposition_never_sees_the_future() {
    let signal = two_tone(72);
    let cfg = config(2, 500.0);
    let causal = decompose_causal(&signal, 64, &cfg).unwrap();
    assert_eq!(causal.modes.dim(), (2, 72));

    let base = decompose(&signal[..64], &cfg).unwrap();
    for k in 0..2 {
        for i in 0..64 {
            assert_eq!(
                causal.modes[[k, i]].to_bits(),
                base.modes[[k, i]].to_bits(),
                "train prefix altered at ({k}, {i})"
            );
        }
    }
    for t in 64..72 {
        let step = decompose(&signal[..=t], &cfg).unwrap();
        for k in 0..2 {
            assert_eq!(
                causal.modes[[k, t]].to_bits(),
                step.modes[[k, t]].to_bits(),
                "expanding step altered at ({k}, {t})"
            );
        }
    }
    assert_eq!(causal.omegas, base.omegas);
}

#[test]
fn causal_rejects_bad_train_lengths() {
    let signal = two_tone(32);
    assert!(matches!(
        decompose_causal(&signal, 0, &config(2, 500.0)),
        Err(Error::Validation(_))
    ));
    assert!(matches!(
        decompose_causal(&signal, 33, &config(2, 500.0)),
        Err(Error::Validation(_))
    ));
}

#[test]
fn modes_csv_has_one_column_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    let signal = two_tone(64);
    let result = decompose(&signal, &config(2, 500.0)).unwrap();
    let path = dir.path().join("modes.csv");
    write_modes_csv(&path, &dates(64), &result).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "date,M0,M1");
    let first = lines.next().unwrap();
    assert!(first.starts_with("2024-01-01,"), "{first}");
    assert_eq!(first.split(',').count(), 3);
    assert_eq!(text.lines().count(), 65);

    assert!(matches!(
        write_modes_csv(&path, &dates(10), &result),
        Err(Error::Validation(_))
    ));
    let parsed: f64 = first.split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(parsed.to_bits(), result.modes[[0, 0]].to_bits());
}
