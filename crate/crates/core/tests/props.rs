//! Property tests for the structural invariants: alignment, scaling, window
//! layout, metric relationships, ensembling, tree additivity, and mode bands.

mod common;

use btclab_core::data::{align, moving_average, AlignedDataset, RawSeries};
use btclab_core::error::Error;
use btclab_core::eval::{
    baseline_forecast, ensemble_with_baseline, metrics, EnsembleMode, ForecastTrace,
};
use btclab_core::gbt::{gbt_predict, gbt_train, GbtConfig, Objective};
use btclab_core::preprocess::{make_windows, split, ScalerParams, SplitSpec};
use btclab_core::vmd::{decompose, InitScheme, VmdConfig};
use ndarray::Array2;
use proptest::prelude::*;

fn one_column(name: &str, values: Vec<f64>) -> AlignedDataset {
    let n = values.len();
    AlignedDataset::from_columns(common::dates(n), vec![(name.to_string(), values)]).unwrap()
}

proptest! {
    /// Aligning keeps exactly the dates common to every series, in ascending
    /// order, with values mapped per name; input order only permutes columns.
    #[test]
    fn align_intersects_dates_order_insensitively(
        masks in prop::collection::vec(prop::collection::vec(any::<bool>(), 30), 2..=4),
    ) {
        let pool = common::dates(30);
        let series: Vec<RawSeries> = masks
            .iter()
            .enumerate()
            .map(|(si, mask)| {
                let points: Vec<_> = mask
                    .iter()
                    .enumerate()
                    .filter(|(_, keep)| **keep)
                    .map(|(di, _)| (pool[di], (si * 1000 + di) as f64))
                    .collect();
                RawSeries::new(format!("S{si}"), points).unwrap()
            })
            .collect();

        let mut expected: Vec<chrono::NaiveDate> = pool
            .iter()
            .enumerate()
            .filter(|(di, _)| masks.iter().all(|m| m[*di]))
            .map(|(_, d)| *d)
            .collect();
        expected.sort();

        match align(&series) {
            Ok(table) => {
                prop_assert!(!expected.is_empty());
                prop_assert_eq!(&table.dates, &expected);
                for (si, _) in series.iter().enumerate() {
                    let col = table.column(&format!("S{si}")).unwrap();
                    for (row, date) in expected.iter().enumerate() {
                        let di = pool.iter().position(|d| d == date).unwrap();
                        prop_assert_eq!(col[row], (si * 1000 + di) as f64);
                    }
                }

                // Reversed input: same rows, same per-name columns.
                let reversed: Vec<RawSeries> = series.iter().rev().cloned().collect();
                let flipped = align(&reversed).unwrap();
                prop_assert_eq!(&flipped.dates, &table.dates);
                for (si, _) in series.iter().enumerate() {
                    let name = format!("S{si}");
                    prop_assert_eq!(
                        table.column(&name).unwrap(),
                        flipped.column(&name).unwrap()
                    );
                }
            }
            Err(Error::InsufficientData(_)) => prop_assert!(expected.is_empty()),
            Err(other) => return Err(TestCaseError::fail(format!("unexpected: {other}"))),
        }
    }

    /// Every trailing-average value lies within its window's min/max, and a
    /// width-1 window is the identity.
    #[test]
    fn moving_average_stays_within_window_bounds(
        values in prop::collection::vec(-1.0e6..1.0e6f64, 1..60),
        window_fraction in 0.0..1.0f64,
    ) {
        let n = values.len();
        let window = 1 + ((n - 1) as f64 * window_fraction) as usize;
        let ma = moving_average(&values, window).unwrap();
        prop_assert_eq!(ma.len(), n - window + 1);
        for (i, avg) in ma.iter().enumerate() {
            let slice = &values[i..i + window];
            let lo = slice.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let slack = 1e-9 * (1.0 + hi.abs().max(lo.abs()));
            prop_assert!(lo - slack <= *avg && *avg <= hi + slack);
        }
        let identity = moving_average(&values, 1).unwrap();
        for (a, b) in identity.iter().zip(&values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    /// unscale(scale(x)) returns x up to rounding, including constant columns.
    #[test]
    fn scaler_round_trips(
        values in prop::collection::vec(-1.0e6..1.0e6f64, 2..40),
        constant in -1.0e6..1.0e6f64,
    ) {
        let n = values.len();
        let table = AlignedDataset::from_columns(
            common::dates(n),
            vec![("A".into(), values.clone()), ("B".into(), vec![constant; n])],
        ).unwrap();
        let scaler = ScalerParams::fit(&table).unwrap();
        let scaled = scaler.transform(&table).unwrap();

        let span = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - values.iter().cloned().fold(f64::INFINITY, f64::min);
        for (i, x) in values.iter().enumerate() {
            let s = scaled.column("A").unwrap()[i];
            prop_assert!((0.0..=1.0).contains(&s), "in-range rows scale into [0, 1]");
            let back = scaler.unscale_value("A", s).unwrap();
            prop_assert!((back - x).abs() <= 1e-9 * (1.0 + x.abs() + span));
        }
        // A constant column scales to 0 and unscales to the constant exactly.
        for (i, s) in scaled.column("B").unwrap().iter().enumerate() {
            prop_assert_eq!(*s, 0.0, "row {}", i);
            prop_assert_eq!(scaler.unscale_value("B", *s).unwrap().to_bits(), constant.to_bits());
        }
    }

    /// MAE never exceeds RMSE, RMSE is the square root of MSE, and the
    /// directional-accuracy rate stays a proportion.
    #[test]
    fn metric_relationships_hold(
        pairs in prop::collection::vec((-1.0e3..1.0e3f64, -1.0e3..1.0e3f64), 2..50),
    ) {
        let n = pairs.len();
        let actual: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let predicted: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let trace = ForecastTrace::new(common::dates(n), actual, predicted, "model").unwrap();
        let m = metrics(&trace).unwrap();
        prop_assert_eq!(m.n, n);
        prop_assert!(m.mae <= m.rmse + 1e-12 * (1.0 + m.rmse));
        prop_assert!((m.rmse * m.rmse - m.mse).abs() <= 1e-12 * (1.0 + m.mse));
        prop_assert!((0.0..=1.0).contains(&m.da));
        let hits = m.da * (n as f64 - 1.0);
        prop_assert!((hits - hits.round()).abs() < 1e-9, "da is hits/(n-1), got {}", m.da);
    }

    /// Directional accuracy only sees movement signs, so any increasing affine
    /// map applied to both series leaves it untouched. Integer lattices keep
    /// the arithmetic exact.
    #[test]
    fn directional_accuracy_ignores_increasing_affine_maps(
        pairs in prop::collection::vec((-100..100i32, -100..100i32), 2..40),
        a in 1..8i32,
        b in -100..100i32,
    ) {
        let n = pairs.len();
        let actual: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let predicted: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let map = |v: &f64| (a as f64) * v + (b as f64);

        let base = ForecastTrace::new(
            common::dates(n), actual.clone(), predicted.clone(), "m",
        ).unwrap();
        let mapped = ForecastTrace::new(
            common::dates(n),
            actual.iter().map(map).collect(),
            predicted.iter().map(map).collect(),
            "m",
        ).unwrap();
        prop_assert_eq!(
            metrics(&base).unwrap().da.to_bits(),
            metrics(&mapped).unwrap().da.to_bits()
        );
    }

    /// Averaging the baseline with itself is the identity, bit for bit.
    #[test]
    fn ensembling_the_baseline_reproduces_it(
        series in prop::collection::vec(0.1..1.0e3f64, 3..40),
    ) {
        let n = series.len() - 1;
        let predicted = baseline_forecast(&series).unwrap();
        let trace = ForecastTrace::new(
            common::dates(n), series[1..].to_vec(), predicted.clone(), "Baseline",
        ).unwrap();

        let (price, _) = ensemble_with_baseline(&trace, &series, EnsembleMode::Price).unwrap();
        for (e, p) in price.predicted.iter().zip(&predicted) {
            prop_assert_eq!(e.to_bits(), p.to_bits());
        }

        // The geometric mean of x with itself is x up to a rounding step.
        let (geo, _) = ensemble_with_baseline(&trace, &series, EnsembleMode::LogReturn).unwrap();
        for (e, p) in geo.predicted.iter().zip(&predicted) {
            prop_assert!((e - p).abs() <= 1e-12 * p.abs());
        }
    }

    /// Chronological splitting is a partition: concatenating the pieces
    /// reproduces the table exactly.
    #[test]
    fn split_concat_reproduces_the_table(
        values in prop::collection::vec(-1.0e3..1.0e3f64, 3..40),
        cut_fraction in 0.01..0.99f64,
    ) {
        let n = values.len();
        let test_days = 1 + ((n - 2) as f64 * cut_fraction) as usize;
        let table = one_column("Close", values.clone());
        let (train, test) = split(&table, SplitSpec { test_days }).unwrap();
        prop_assert_eq!(train.num_rows() + test.num_rows(), n);
        prop_assert_eq!(test.num_rows(), test_days);

        let mut dates = train.dates.clone();
        dates.extend(&test.dates);
        prop_assert_eq!(&dates, &table.dates);

        let mut col = train.column("Close").unwrap().to_vec();
        col.extend(test.column("Close").unwrap());
        for (a, b) in col.iter().zip(&values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    /// Window i is rows i..i+w of the source and its target is row i+w.
    #[test]
    fn windows_cover_every_offset(
        values in prop::collection::vec(-1.0e3..1.0e3f64, 3..30),
        window_fraction in 0.0..1.0f64,
    ) {
        let n = values.len();
        let window_len = 1 + ((n - 2) as f64 * window_fraction) as usize;
        let table = one_column("Close", values.clone());
        let set = make_windows(&table, window_len, "Close").unwrap();
        prop_assert_eq!(set.num_windows(), n - window_len);
        for i in 0..set.num_windows() {
            for t in 0..window_len {
                prop_assert_eq!(set.inputs[[i, t, 0]].to_bits(), values[i + t].to_bits());
            }
            prop_assert_eq!(set.targets[i].to_bits(), values[i + window_len].to_bits());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// A booster's prediction is exactly its init score plus the sum of its
    /// trees' leaf values.
    #[test]
    fn boosted_predictions_are_additive(
        cells in prop::collection::vec(0..16u8, 16..48),
        targets_seed in 0..1000i32,
        rounds in 1..4usize,
    ) {
        let cols = 2;
        let n = cells.len() / cols;
        let features = Array2::from_shape_fn((n, cols), |(i, j)| {
            f64::from(cells[i * cols + j]) / 4.0
        });
        let targets: Vec<f64> = (0..n)
            .map(|i| f64::from((i as i32 * 31 + targets_seed) % 17) / 5.0)
            .collect();
        let config = GbtConfig {
            rounds,
            learning_rate: 0.4,
            objective: Objective::SquaredError,
            num_leaves: 4,
            min_data_in_leaf: 1,
            bagging_fraction: 1.0,
            bagging_freq: 1,
            colsample: 1.0,
            lambda_l1: 0.0,
            lambda_l2: 0.0,
            early_stopping_rounds: usize::MAX,
            seed: 1,
        };
        let booster = gbt_train(&config, &features, &targets, None).unwrap();
        let preds = gbt_predict(&booster, &features).unwrap();
        for i in 0..n {
            let row = features.row(i);
            let row = row.as_slice().unwrap();
            let sum = booster.init_score
                + booster.trees.iter().map(|t| t.predict_row(row)).sum::<f64>();
            prop_assert_eq!(preds[i].to_bits(), sum.to_bits());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Center frequencies always come back ascending and inside the
    /// discrete-time band [0, 0.5], converged or not.
    #[test]
    fn mode_frequencies_stay_in_band(
        f1 in 0.02..0.2f64,
        f2 in 0.25..0.45f64,
        amp in 0.5..2.0f64,
        k in 2..4usize,
    ) {
        let n = 96;
        let signal: Vec<f64> = (0..n)
            .map(|t| {
                let t = t as f64;
                (std::f64::consts::TAU * f1 * t).cos()
                    + amp * (std::f64::consts::TAU * f2 * t).cos()
            })
            .collect();
        let config = VmdConfig {
            k,
            alpha: 1000.0,
            tau: 0.0,
            dc_mode: false,
            init: InitScheme::Uniform,
            tol: 1e-7,
            max_iter: 30,
            seed: 0,
        };
        let result = decompose(&signal, &config).unwrap();
        prop_assert_eq!(result.modes.dim(), (k, n));
        for w in result.omegas.windows(2) {
            prop_assert!(w[0] <= w[1], "omegas sorted: {:?}", &result.omegas);
        }
        for omega in &result.omegas {
            prop_assert!((0.0..=0.5).contains(omega));
        }
        prop_assert!(result.modes.iter().all(|v| v.is_finite()));
    }
}
