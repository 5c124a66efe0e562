//! Traffic–pollution coupling analyses: Pearson coefficient, hourly lag
//! scans, and per-day correlation breakdowns.
//!
//! Pollution measurements arrive hourly, so 10-minute traffic is rebinned to
//! hourly sums before comparison. Lag sign convention: positive lag means
//! traffic leads (traffic shifted forward in time is compared against
//! unshifted pollution).

use chrono::{DateTime, Duration, NaiveDate, Timelike, Utc};

use crate::data::{SegmentId, TrafficMatrix};

pub const HOUR_SECONDS: i64 = 3600;

/// Evenly spaced hourly series starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlySeries {
    pub start: DateTime<Utc>,
    pub values: Vec<f64>,
}

impl HourlySeries {
    pub fn new(start: DateTime<Utc>, values: Vec<f64>) -> Self {
        assert!(
            values.iter().all(|v| v.is_finite()),
            "hourly values must be finite"
        );
        HourlySeries { start, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time_at(&self, i: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(HOUR_SECONDS * i as i64)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorrelationError {
    #[error("series start {0} is not on an hour boundary")]
    MisalignedStart(DateTime<Utc>),
    #[error("matrix has unobserved cells; impute before rebinning")]
    NotImputed,
    #[error("segment {0} not present in matrix")]
    SegmentNotFound(SegmentId),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("series is constant; correlation undefined")]
    ConstantSeries,
    #[error("only {points} overlapping points at lag {lag}; need at least {needed}")]
    InsufficientOverlap {
        lag: i64,
        points: usize,
        needed: usize,
    },
    #[error("series does not cover whole days (start {start}, {len} hours)")]
    PartialDay { start: DateTime<Utc>, len: usize },
}

/// Sum each run of six 10-minute bins into one hourly value for `segment`.
/// A trailing partial hour is dropped.
pub fn rebin_to_hourly(
    matrix: &TrafficMatrix,
    segment: &SegmentId,
) -> Result<HourlySeries, CorrelationError> {
    let start = matrix.start();
    if start.minute() != 0 || start.second() != 0 || start.nanosecond() != 0 {
        return Err(CorrelationError::MisalignedStart(start));
    }
    if !matrix.fully_observed() {
        return Err(CorrelationError::NotImputed);
    }
    let col = matrix
        .segment_index(segment)
        .ok_or_else(|| CorrelationError::SegmentNotFound(segment.clone()))?;
    let n_hours = matrix.n_times() / 6;
    let values = (0..n_hours)
        .map(|h| (0..6).map(|k| matrix.value(h * 6 + k, col)).sum())
        .collect();
    Ok(HourlySeries::new(start, values))
}

/// Pearson correlation coefficient of two equal-length series.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, CorrelationError> {
    if x.len() != y.len() {
        return Err(CorrelationError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(CorrelationError::ConstantSeries);
    }
    let mean_x = x.iter().sum::<f64>() / n as f64;
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mean_x;
        let dy = yi - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(CorrelationError::ConstantSeries);
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

/// Correlation at each hourly lag in [−max_lag, max_lag].
#[derive(Debug, Clone)]
pub struct LagScanResult {
    pub lags: Vec<i64>,
    pub rho: Vec<f64>,
    pub best_lag: i64,
}

/// Minimum paired points required at every scanned lag.
pub const MIN_OVERLAP: usize = 48;

/// Scan correlation between traffic shifted by k hours and unshifted
/// pollution, for k in [−max_lag, max_lag]. Positive k means traffic leads.
/// Ties for the best lag resolve to the smallest |lag|, negative first.
pub fn lag_scan(
    traffic: &HourlySeries,
    pollution: &HourlySeries,
    max_lag: i64,
) -> Result<LagScanResult, CorrelationError> {
    assert!(max_lag >= 0, "max_lag must be non-negative");
    let delta = pollution.start - traffic.start;
    if delta.num_seconds() % HOUR_SECONDS != 0 {
        return Err(CorrelationError::MisalignedStart(pollution.start));
    }
    // traffic index i pairs with pollution index j when T0+(i+k)h == P0+jh,
    // i.e. i = j - k + d with d = (P0 - T0) in hours.
    let d = delta.num_seconds() / HOUR_SECONDS;

    let mut lags = Vec::new();
    let mut rho = Vec::new();
    for k in -max_lag..=max_lag {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for j in 0..pollution.len() {
            let i = j as i64 - k + d;
            if i >= 0 && (i as usize) < traffic.len() {
                xs.push(traffic.values[i as usize]);
                ys.push(pollution.values[j]);
            }
        }
        if xs.len() < MIN_OVERLAP {
            return Err(CorrelationError::InsufficientOverlap {
                lag: k,
                points: xs.len(),
                needed: MIN_OVERLAP,
            });
        }
        lags.push(k);
        rho.push(pearson(&xs, &ys)?);
    }

    let mut best = 0usize;
    for i in 1..lags.len() {
        if lag_beats(lags[i], rho[i], lags[best], rho[best]) {
            best = i;
        }
    }
    Ok(LagScanResult {
        best_lag: lags[best],
        lags,
        rho,
    })
}

// Higher rho wins; exact ties go to the smaller |lag|, then the negative one.
fn lag_beats(lag_a: i64, rho_a: f64, lag_b: i64, rho_b: f64) -> bool {
    if rho_a != rho_b {
        return rho_a > rho_b;
    }
    if lag_a.abs() != lag_b.abs() {
        return lag_a.abs() < lag_b.abs();
    }
    lag_a < lag_b
}

/// One calendar day's correlation; `rho` is None when either series was
/// constant over that day.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyCorrelation {
    pub date: NaiveDate,
    pub rho: Option<f64>,
}

/// Per-calendar-day Pearson coefficient over each day's 24 aligned hours.
/// Both series must start at midnight and cover whole days; the result spans
/// the days the two series share. Constant days are reported, not dropped.
pub fn daily_correlation(
    traffic: &HourlySeries,
    pollution: &HourlySeries,
) -> Result<Vec<DailyCorrelation>, CorrelationError> {
    for s in [traffic, pollution] {
        let midnight = s.start.hour() == 0
            && s.start.minute() == 0
            && s.start.second() == 0
            && s.start.nanosecond() == 0;
        if !midnight || s.len() % 24 != 0 || s.is_empty() {
            return Err(CorrelationError::PartialDay {
                start: s.start,
                len: s.len(),
            });
        }
    }
    let first = traffic.start.max(pollution.start);
    let last = traffic
        .time_at(traffic.len())
        .min(pollution.time_at(pollution.len()));

    let mut out = Vec::new();
    let mut day_start = first;
    while day_start + Duration::hours(24) <= last {
        let ti = ((day_start - traffic.start).num_seconds() / HOUR_SECONDS) as usize;
        let pi = ((day_start - pollution.start).num_seconds() / HOUR_SECONDS) as usize;
        let tx = &traffic.values[ti..ti + 24];
        let px = &pollution.values[pi..pi + 24];
        let rho = match pearson(tx, px) {
            Ok(r) => Some(r),
            Err(CorrelationError::ConstantSeries) => None,
            Err(e) => return Err(e),
        };
        out.push(DailyCorrelation {
            date: day_start.date_naive(),
            rho,
        });
        day_start += Duration::hours(24);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TrafficMatrix;
    use crate::timefmt::parse_instant;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn ts(s: &str) -> DateTime<Utc> {
        parse_instant(s).unwrap()
    }

    fn hourly(start: &str, values: Vec<f64>) -> HourlySeries {
        HourlySeries::new(ts(start), values)
    }

    #[test]
    fn rebin_sums_six_bins() {
        let m = TrafficMatrix::from_parts(
            ts("2018-01-01T00:00Z"),
            vec!["A".into()],
            vec![10.0; 6],
            vec![true; 6],
        );
        let h = rebin_to_hourly(&m, &"A".into()).unwrap();
        assert_eq!(h.values, vec![60.0]);
    }

    #[test]
    fn rebin_alternating() {
        let vals: Vec<f64> = (0..12)
            .map(|i| if i % 2 == 0 { 0.0 } else { 10.0 })
            .collect();
        let m = TrafficMatrix::from_parts(
            ts("2018-01-01T00:00Z"),
            vec!["A".into()],
            vals,
            vec![true; 12],
        );
        let h = rebin_to_hourly(&m, &"A".into()).unwrap();
        assert_eq!(h.values, vec![30.0, 30.0]);
    }

    #[test]
    fn rebin_rejects_offset_start() {
        let m = TrafficMatrix::from_parts(
            ts("2018-01-01T00:10Z"),
            vec!["A".into()],
            vec![1.0; 6],
            vec![true; 6],
        );
        assert!(matches!(
            rebin_to_hourly(&m, &"A".into()).unwrap_err(),
            CorrelationError::MisalignedStart(_)
        ));
    }

    #[test]
    fn pearson_identity_and_antiidentity() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| -2.0 * v + 3.0).collect();
        assert!((pearson(&x, &y).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_hand_value() {
        // x=(1,2,3,4), y=(1,3,2,4): covariance 4, both deviations sqrt(5)
        let rho = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((rho - 0.8).abs() < 1e-12, "{rho}");
    }

    #[test]
    fn pearson_rejects_constant_and_mismatch() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap_err(),
            CorrelationError::ConstantSeries
        ));
        assert!(matches!(
            pearson(&[1.0], &[1.0, 2.0]).unwrap_err(),
            CorrelationError::LengthMismatch(1, 2)
        ));
    }

    fn diurnal(n_hours: usize, start: &str) -> HourlySeries {
        let values = (0..n_hours)
            .map(|i| 100.0 + 80.0 * ((i % 24) as f64 / 24.0 * std::f64::consts::TAU).sin())
            .collect();
        hourly(start, values)
    }

    #[test]
    fn lag_scan_self_copy_peaks_at_zero() {
        let t = diurnal(24 * 7, "2018-02-05T00:00Z");
        let r = lag_scan(&t, &t.clone(), 24).unwrap();
        assert_eq!(r.best_lag, 0);
        let at_zero = r.rho[r.lags.iter().position(|&l| l == 0).unwrap()];
        assert!((at_zero - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lag_scan_detects_three_hour_delay() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let t = diurnal(24 * 14, "2018-02-05T00:00Z");
        // pollution at hour j equals traffic at hour j-3, plus small noise
        let delayed = HourlySeries::new(
            t.start + Duration::hours(3),
            t.values
                .iter()
                .map(|v| v + rng.gen_range(-2.0..2.0))
                .collect(),
        );
        let r = lag_scan(&t, &delayed, 12).unwrap();
        assert_eq!(r.best_lag, 3);
    }

    #[test]
    fn lag_scan_periodic_profile() {
        // 24-hour periodic series: rho(+-24) matches rho(0) and the
        // smallest-|lag| tie-break keeps best_lag at 0.
        let t = diurnal(24 * 28, "2018-02-05T00:00Z");
        let r = lag_scan(&t, &t.clone(), 24).unwrap();
        assert_eq!(r.best_lag, 0);
        let rho_at = |l: i64| r.rho[r.lags.iter().position(|&x| x == l).unwrap()];
        assert!((rho_at(24) - rho_at(0)).abs() < 0.05);
        assert!((rho_at(-24) - rho_at(0)).abs() < 0.05);
    }

    #[test]
    fn lag_scan_rejects_thin_overlap() {
        let t = diurnal(50, "2018-02-05T00:00Z");
        let err = lag_scan(&t, &t.clone(), 24).unwrap_err();
        assert!(matches!(err, CorrelationError::InsufficientOverlap { .. }));
    }

    #[test]
    fn daily_correlation_perfect_days() {
        let t = diurnal(24 * 3, "2018-02-05T00:00Z");
        let out = daily_correlation(&t, &t.clone()).unwrap();
        assert_eq!(out.len(), 3);
        for d in &out {
            assert!((d.rho.unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn daily_correlation_flags_constant_day() {
        let t = diurnal(24 * 2, "2018-02-05T00:00Z");
        let mut p = t.clone();
        for v in &mut p.values[24..48] {
            *v = 55.0; // background only on day two
        }
        let out = daily_correlation(&t, &p).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out[0].rho.is_some());
        assert_eq!(out[1].rho, None);
    }

    #[test]
    fn daily_correlation_rejects_partial_days() {
        let t = diurnal(30, "2018-02-05T00:00Z");
        let p = diurnal(30, "2018-02-05T00:00Z");
        assert!(matches!(
            daily_correlation(&t, &p).unwrap_err(),
            CorrelationError::PartialDay { .. }
        ));
    }

    #[test]
    fn daily_correlation_uses_shared_days() {
        let t = diurnal(24 * 4, "2018-02-05T00:00Z");
        let p = diurnal(24 * 4, "2018-02-06T00:00Z");
        let out = daily_correlation(&t, &p).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].date, ts("2018-02-06T00:00Z").date_naive());
    }
}
