//! Property tests for the module invariants.

use chrono::{DateTime, Duration, TimeZone, Utc};
use proptest::prelude::*;

use fluxwarn_core::alarm::{classify, compute_thresholds, evaluate, AlarmLevel, AlarmThresholds};
use fluxwarn_core::correlation::{lag_scan, pearson, HourlySeries};
use fluxwarn_core::data::{
    apply_norm, build_matrix, fit_norm, impute, invert_norm, make_windows, parse_records,
    FluxRecord, SegmentId, TrafficMatrix,
};

fn base_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2018, 3, 5, 0, 0, 0).unwrap()
}

fn records_strategy() -> impl Strategy<Value = Vec<FluxRecord>> {
    prop::collection::hash_map((0usize..24, 0usize..4), 0u32..500, 1..40).prop_map(|cells| {
        cells
            .into_iter()
            .map(|((t, s), count)| FluxRecord {
                timestamp: base_time() + Duration::minutes(10 * t as i64),
                segment: SegmentId::new(format!("S{s}")),
                count,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn build_matrix_preserves_record_multiset(records in records_strategy()) {
        let matrix = build_matrix(&records).unwrap();
        let mut observed: Vec<(DateTime<Utc>, String, f64)> = Vec::new();
        for t in 0..matrix.n_times() {
            for s in 0..matrix.n_segments() {
                if let Some(v) = matrix.get(t, s) {
                    observed.push((matrix.time_at(t), matrix.segments()[s].to_string(), v));
                }
            }
        }
        let mut expected: Vec<(DateTime<Utc>, String, f64)> = records
            .iter()
            .map(|r| (r.timestamp, r.segment.to_string(), f64::from(r.count)))
            .collect();
        observed.sort_by(|a, b| a.partial_cmp(b).unwrap());
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        prop_assert_eq!(observed, expected);
    }
}

fn masked_matrix_strategy() -> impl Strategy<Value = TrafficMatrix> {
    (1usize..8, 1usize..4)
        .prop_flat_map(|(t, s)| {
            let cells = prop::collection::vec((0u32..100, prop::bool::ANY), t * s);
            (Just(t), Just(s), cells)
        })
        .prop_map(|(t, s, cells)| {
            let mut values: Vec<f64> = cells.iter().map(|(v, _)| f64::from(*v)).collect();
            let mut mask: Vec<bool> = cells.iter().map(|(_, m)| *m).collect();
            // every segment needs at least one observation for impute
            for col in 0..s {
                if !(0..t).any(|row| mask[row * s + col]) {
                    mask[col] = true;
                    values[col] = 1.0;
                }
            }
            let segments = (0..s).map(|i| SegmentId::new(format!("S{i}"))).collect();
            TrafficMatrix::from_parts(base_time(), segments, values, mask)
        })
}

proptest! {
    #[test]
    fn impute_is_idempotent(matrix in masked_matrix_strategy()) {
        let once = impute(&matrix).unwrap();
        let twice = impute(&once).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn window_count_formula(
        t in 9usize..40,
        s in 1usize..4,
        lookback in 1usize..8,
        horizon in 1usize..4,
    ) {
        prop_assume!(lookback + horizon <= t);
        let values: Vec<f64> = (0..t * s).map(|i| i as f64).collect();
        let segments: Vec<SegmentId> = (0..s).map(|i| SegmentId::new(format!("S{i}"))).collect();
        let matrix = TrafficMatrix::from_parts(base_time(), segments, values, vec![true; t * s]);
        let windows = make_windows(&matrix, &SegmentId::new("S0"), lookback, horizon).unwrap();
        prop_assert_eq!(windows.len(), t - lookback - horizon + 1);
    }

    #[test]
    fn norm_round_trip_is_identity(
        t in 2usize..10,
        s in 1usize..4,
        raw in prop::collection::vec(0f64..2000.0, 40),
    ) {
        let values: Vec<f64> = (0..t * s).map(|i| raw[i % raw.len()]).collect();
        let segments: Vec<SegmentId> = (0..s).map(|i| SegmentId::new(format!("S{i}"))).collect();
        let matrix = TrafficMatrix::from_parts(base_time(), segments, values, vec![true; t * s]);
        let stats = fit_norm(&matrix).unwrap();
        let normed = apply_norm(&matrix, &stats);
        for col in 0..s {
            let series: Vec<f64> = (0..t).map(|row| normed.value(row, col)).collect();
            let back = invert_norm(&series, &stats, col);
            for (row, b) in back.iter().enumerate() {
                let orig = matrix.value(row, col);
                prop_assert!((b - orig).abs() <= 1e-9 * orig.abs().max(1.0));
            }
        }
    }

    // fuzzed lines either parse into a valid record or are rejected whole
    #[test]
    fn parser_accepts_only_valid_records(line in "[ -~]{0,40}") {
        if let Ok(records) = parse_records(std::io::Cursor::new(line), false) {
            for r in records {
                prop_assert!(fluxwarn_core::timefmt::is_ten_min_aligned(r.timestamp));
                prop_assert!(!r.segment.as_str().is_empty());
            }
        }
    }

    #[test]
    fn parser_rejects_misaligned_minutes(minute in 0u32..60, second in 0u32..60) {
        prop_assume!(minute % 10 != 0 || second != 0);
        let line = format!("2018-01-01T00:{minute:02}:{second:02}Z,S001,5");
        prop_assert!(parse_records(std::io::Cursor::new(line), false).is_err());
    }
}

fn finite_series(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1000f64..1000.0, len)
}

proptest! {
    #[test]
    fn pearson_is_symmetric_and_bounded(
        pairs in prop::collection::vec((-1000f64..1000.0, -1000f64..1000.0), 2..50)
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        match (pearson(&x, &y), pearson(&y, &x)) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a, b); // bitwise symmetric
                prop_assert!(a.abs() <= 1.0 + 1e-12);
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "symmetry broken in error behavior"),
        }
    }

    #[test]
    fn pearson_affine_invariance(
        x in finite_series(2..40),
        scale in 0.1f64..10.0,
        offset in -100f64..100.0,
    ) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + (i % 3) as f64).collect();
        prop_assume!(pearson(&x, &y).is_ok());
        let mapped: Vec<f64> = x.iter().map(|v| scale * v + offset).collect();
        let a = pearson(&x, &y).unwrap();
        let b = pearson(&mapped, &y).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn lag_scan_self_peaks_at_zero(seed in 0u64..500) {
        let values: Vec<f64> = (0..80)
            .map(|i| ((i as u64 * 2654435761 + seed) % 97) as f64 + (i % 7) as f64)
            .collect();
        let series = HourlySeries::new(base_time(), values);
        let scan = lag_scan(&series, &series.clone(), 3).unwrap();
        prop_assert_eq!(scan.best_lag, 0);
        let at_zero = scan.rho[scan.lags.iter().position(|&l| l == 0).unwrap()];
        prop_assert!((at_zero - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classify_is_monotone(
        p50 in 0f64..500.0,
        spread in 0f64..200.0,
        f1 in 0f64..1000.0,
        f2 in 0f64..1000.0,
    ) {
        let th = AlarmThresholds {
            segment: SegmentId::new("S"),
            p50,
            p75: p50 + spread,
            sample_count: 1,
            window: (base_time(), base_time()),
        };
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        prop_assert!(classify(lo, &th) <= classify(hi, &th));
    }

    #[test]
    fn thresholds_are_ordered(values in prop::collection::vec(0f64..1e4, 1..200)) {
        let series: Vec<(DateTime<Utc>, f64)> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let day = (i / 16) as i64;
                let hour = 6 + (i % 16) as i64;
                (base_time() + Duration::days(day) + Duration::hours(hour), v)
            })
            .collect();
        let as_of = base_time() + Duration::days(250); // stays inside 2018
        let th = compute_thresholds(&SegmentId::new("S"), &series, as_of).unwrap();
        prop_assert!(th.p50 <= th.p75);
    }

    #[test]
    fn evaluate_self_is_diagonal(levels in prop::collection::vec(0usize..3, 0..100)) {
        let seq: Vec<AlarmLevel> = levels.iter().map(|&i| AlarmLevel::ALL[i]).collect();
        let cm = evaluate(&seq, &seq).unwrap();
        prop_assert!(cm.is_diagonal());
        prop_assert_eq!(cm.total(), seq.len() as u64);
    }
}
