//! Preprocessing tests: chronological splits, min-max scaling, window tensor
//! layout, and the binary window cache.

mod common;

use btclab_core::data::AlignedDataset;
use btclab_core::preprocess::{
    make_windows, make_windows_selected, split, ScalerParams, SplitSpec, WindowedSet,
};
use btclab_core::Error;
use common::dates;

fn table(columns: &[(&str, &[f64])]) -> AlignedDataset {
    let n = columns[0].1.len();
    AlignedDataset::from_columns(
        dates(n),
        columns
            .iter()
            .map(|(name, values)| (name.to_string(), values.to_vec()))
            .collect(),
    )
    .unwrap()
}

#[test]
fn split_keeps_chronology() {
    let data = table(&[("Close", &[1.0, 2.0, 3.0, 4.0, 5.0])]);
    let (train, test) = split(&data, SplitSpec { test_days: 2 }).unwrap();
    assert_eq!(train.column("Close").unwrap(), &[1.0, 2.0, 3.0]);
    assert_eq!(test.column("Close").unwrap(), &[4.0, 5.0]);
    assert_eq!(train.dates.last().unwrap(), &dates(3)[2]);
    assert_eq!(test.dates.first().unwrap(), &dates(4)[3]);
}

#[test]
fn split_rejects_degenerate_cuts() {
    let data = table(&[("Close", &[1.0, 2.0, 3.0])]);
    assert!(matches!(
        split(&data, SplitSpec { test_days: 0 }),
        Err(Error::Validation(_))
    ));
    assert!(matches!(
        split(&data, SplitSpec { test_days: 3 }),
        Err(Error::Validation(_))
    ));
}

#[test]
fn scaler_maps_fitted_range_onto_unit_interval() {
    let data = table(&[("Close", &[10.0, 20.0, 30.0]), ("Volume", &[5.0, 5.0, 5.0])]);
    let scaler = ScalerParams::fit(&data).unwrap();
    let scaled = scaler.transform(&data).unwrap();
    assert_eq!(scaled.column("Close").unwrap(), &[0.0, 0.5, 1.0]);
    // Constant columns collapse to zero rather than dividing by a zero span.
    assert_eq!(scaled.column("Volume").unwrap(), &[0.0, 0.0, 0.0]);
}

#[test]
fn scaler_extrapolates_outside_the_fitted_range() {
    let data = table(&[("Close", &[10.0, 20.0])]);
    let scaler = ScalerParams::fit(&data).unwrap();
    assert_eq!(scaler.scale_value("Close", 25.0).unwrap(), 1.5);
    assert_eq!(scaler.scale_value("Close", 0.0).unwrap(), -1.0);
    assert_eq!(scaler.unscale_value("Close", 1.5).unwrap(), 25.0);
}

#[test]
fn scaler_round_trips_within_float_noise() {
    let values: Vec<f64> = (0..50).map(|i| 30_000.0 + 137.0 * i as f64).collect();
    let data = table(&[("Close", &values)]);
    let scaler = ScalerParams::fit(&data).unwrap();
    let scaled = scaler.transform(&data).unwrap();
    let restored = scaler
        .inverse("Close", scaled.column("Close").unwrap())
        .unwrap();
    for (orig, back) in values.iter().zip(&restored) {
        assert!((orig - back).abs() < 1e-9, "{orig} vs {back}");
    }
}

#[test]
fn scaler_rejects_unknown_features_and_empty_fits() {
    let data = table(&[("Close", &[1.0, 2.0])]);
    let scaler = ScalerParams::fit(&data).unwrap();
    assert!(matches!(
        scaler.scale_value("Open", 1.0),
        Err(Error::Validation(_))
    ));
    let empty = AlignedDataset::from_columns(Vec::new(), Vec::new()).unwrap();
    assert!(matches!(
        ScalerParams::fit(&empty),
        Err(Error::InsufficientData(_))
    ));
}

/// Window i must hold rows i..i+w of the inputs and target row i+w, exactly.
#[test]
fn windows_have_documented_layout() {
    let data = table(&[
        ("Close", &[10.0, 11.0, 12.0, 13.0, 14.0]),
        ("Volume", &[100.0, 101.0, 102.0, 103.0, 104.0]),
    ]);
    let set = make_windows(&data, 3, "Close").unwrap();
    assert_eq!(set.num_windows(), 2);
    assert_eq!(set.window_len(), 3);
    assert_eq!(set.num_features(), 2);
    assert_eq!(set.input_names, vec!["Close", "Volume"]);
    assert_eq!(set.target_name, "Close");

    for i in 0..2 {
        for t in 0..3 {
            assert_eq!(set.inputs[[i, t, 0]], 10.0 + (i + t) as f64);
            assert_eq!(set.inputs[[i, t, 1]], 100.0 + (i + t) as f64);
        }
        assert_eq!(set.targets[i], 10.0 + (i + 3) as f64);
    }
}

#[test]
fn window_feature_subset_may_exclude_the_target() {
    let data = table(&[
        ("Close", &[1.0, 2.0, 3.0, 4.0]),
        ("Low", &[0.5, 1.5, 2.5, 3.5]),
    ]);
    let set = make_windows_selected(&data, 2, &["Low"], "Close").unwrap();
    assert_eq!(set.input_names, vec!["Low"]);
    assert_eq!(set.num_features(), 1);
    assert_eq!(set.inputs[[0, 0, 0]], 0.5);
    assert_eq!(set.targets.to_vec(), vec![3.0, 4.0]);
}

#[test]
fn windows_reject_bad_shapes() {
    let data = table(&[("Close", &[1.0, 2.0, 3.0])]);
    assert!(matches!(
        make_windows(&data, 0, "Close"),
        Err(Error::Validation(_))
    ));
    assert!(matches!(
        make_windows(&data, 3, "Close"),
        Err(Error::InsufficientData(_))
    ));
    assert!(matches!(
        make_windows(&data, 2, "Open"),
        Err(Error::Validation(_))
    ));
}

#[test]
fn flattened_inputs_walk_time_then_feature() {
    let data = table(&[
        ("Close", &[1.0, 2.0, 3.0]),
        ("Volume", &[10.0, 20.0, 30.0]),
    ]);
    let set = make_windows(&data, 2, "Close").unwrap();
    let flat = set.flattened_inputs();
    assert_eq!(flat.dim(), (1, 4));
    // Row-major over (time, feature): t0f0 t0f1 t1f0 t1f1.
    assert_eq!(
        flat.row(0).to_vec(),
        vec![1.0, 10.0, 2.0, 20.0]
    );
}

#[test]
fn window_cache_round_trips_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<f64> = (0..20)
        .map(|i| 0.1 + (i as f64) * 0.317_111_222_333)
        .collect();
    let data = table(&[("Close", &values), ("Low", &values)]);
    let set = make_windows(&data, 4, "Close").unwrap();
    let path = dir.path().join("windows.bin");
    set.save(&path).unwrap();
    let loaded = WindowedSet::load(&path).unwrap();
    assert_eq!(set, loaded);
    for (a, b) in set.inputs.iter().zip(loaded.inputs.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn window_cache_rejects_damage() {
    let dir = tempfile::tempdir().unwrap();
    let data = table(&[("Close", &[1.0, 2.0, 3.0, 4.0])]);
    let set = make_windows(&data, 2, "Close").unwrap();
    let path = dir.path().join("windows.bin");
    set.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let truncated = dir.path().join("truncated.bin");
    std::fs::write(&truncated, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(WindowedSet::load(&truncated), Err(Error::Decode(_))));

    let padded = dir.path().join("padded.bin");
    let mut longer = bytes.clone();
    longer.extend_from_slice(&[0, 0]);
    std::fs::write(&padded, longer).unwrap();
    assert!(matches!(WindowedSet::load(&padded), Err(Error::Decode(_))));

    let scribbled = dir.path().join("scribbled.bin");
    let mut wrong = bytes;
    wrong[3] = b'!';
    std::fs::write(&scribbled, wrong).unwrap();
    assert!(matches!(WindowedSet::load(&scribbled), Err(Error::Decode(_))));
}
