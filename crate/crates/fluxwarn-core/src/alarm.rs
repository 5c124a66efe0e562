//! Per-segment alarm thresholds, three-tier classification, skew-normal
//! distribution fitting, and confusion-matrix scoring.
//!
//! Thresholds are the 50th and 75th percentiles of a segment's daytime flux
//! history (hours 06–22), recomputed from January 1st of the as-of year.
//! Classification puts boundary values in the Medium tier. The skew-normal
//! fit is a separate analysis capability; the alarm path itself works on raw
//! percentiles, which the data supports just as reliably.

use std::io::{BufRead, Write};

use chrono::{DateTime, Datelike, TimeZone, Timelike, Utc};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::SegmentId;
use crate::timefmt;

/// Daytime window used for threshold provenance: hours `[6, 22)` UTC.
pub const DAYTIME_HOURS: (u32, u32) = (6, 22);

/// True if the instant falls in the daytime window thresholds derive from.
/// Classification outside this window is computable but advisory, since
/// night flux carries little signal.
pub fn is_daytime(instant: DateTime<Utc>) -> bool {
    let h = instant.hour();
    h >= DAYTIME_HOURS.0 && h < DAYTIME_HOURS.1
}

#[derive(Debug, thiserror::Error)]
pub enum AlarmError {
    #[error("no daytime observations in the threshold window")]
    NoDaytimeData,
    #[error("scale parameter must be positive, got {0}")]
    InvalidScale(f64),
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("skew-normal fit did not converge after {0} iterations")]
    NonConvergence(usize),
    #[error("sequence lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("thresholds file line {line}: {reason}")]
    BadThresholdsFile { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Three-tier alarm level, ordered Low < Medium < High.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AlarmLevel {
    Low,
    Medium,
    High,
}

impl AlarmLevel {
    pub const ALL: [AlarmLevel; 3] = [AlarmLevel::Low, AlarmLevel::Medium, AlarmLevel::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AlarmLevel::Low => "Low",
            AlarmLevel::Medium => "Medium",
            AlarmLevel::High => "High",
        }
    }

    pub fn parse(text: &str) -> Option<AlarmLevel> {
        match text {
            "Low" => Some(AlarmLevel::Low),
            "Medium" => Some(AlarmLevel::Medium),
            "High" => Some(AlarmLevel::High),
            _ => None,
        }
    }
}

impl std::fmt::Display for AlarmLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-segment percentile thresholds plus the provenance window they were
/// computed over.
#[derive(Debug, Clone, PartialEq)]
pub struct AlarmThresholds {
    pub segment: SegmentId,
    pub p50: f64,
    pub p75: f64,
    pub sample_count: usize,
    pub window: (DateTime<Utc>, DateTime<Utc>),
}

/// Percentile by linear interpolation between closest order statistics.
/// `sorted` must be ascending and non-empty; `fraction` in [0, 1].
pub fn percentile(sorted: &[f64], fraction: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&fraction));
    let rank = fraction * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

/// Compute a segment's p50/p75 thresholds from its flux history.
///
/// Uses observations from January 1st of `as_of`'s year up to and including
/// `as_of`, restricted to daytime hours.
pub fn compute_thresholds(
    segment: &SegmentId,
    series: &[(DateTime<Utc>, f64)],
    as_of: DateTime<Utc>,
) -> Result<AlarmThresholds, AlarmError> {
    let jan1 = Utc
        .with_ymd_and_hms(as_of.year(), 1, 1, 0, 0, 0)
        .single()
        .expect("jan 1 is always a valid instant");
    let mut daytime: Vec<f64> = series
        .iter()
        .filter(|(t, _)| *t >= jan1 && *t <= as_of && is_daytime(*t))
        .map(|(_, v)| *v)
        .collect();
    if daytime.is_empty() {
        return Err(AlarmError::NoDaytimeData);
    }
    daytime.sort_by(|a, b| a.partial_cmp(b).expect("flux values are finite"));
    Ok(AlarmThresholds {
        segment: segment.clone(),
        p50: percentile(&daytime, 0.50),
        p75: percentile(&daytime, 0.75),
        sample_count: daytime.len(),
        window: (jan1, as_of),
    })
}

/// Classify a flux value: below p50 is Low, above p75 is High, boundaries
/// fall in Medium (erring toward caution).
pub fn classify(flux: f64, thresholds: &AlarmThresholds) -> AlarmLevel {
    if flux < thresholds.p50 {
        AlarmLevel::Low
    } else if flux > thresholds.p75 {
        AlarmLevel::High
    } else {
        AlarmLevel::Medium
    }
}

/// Write thresholds as `segment_id,p50,p75,sample_count,window_start,window_end`.
pub fn write_thresholds_csv<W: Write>(
    rows: &[AlarmThresholds],
    mut w: W,
) -> Result<(), AlarmError> {
    writeln!(w, "segment_id,p50,p75,sample_count,window_start,window_end")?;
    for t in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            t.segment,
            t.p50,
            t.p75,
            t.sample_count,
            timefmt::format_instant(t.window.0),
            timefmt::format_instant(t.window.1),
        )?;
    }
    Ok(())
}

/// Read a thresholds CSV written by [`write_thresholds_csv`].
pub fn read_thresholds_csv<R: BufRead>(reader: R) -> Result<Vec<AlarmThresholds>, AlarmError> {
    let bad = |line: usize, reason: String| AlarmError::BadThresholdsFile { line, reason };
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if idx == 0 {
            if !line.starts_with("segment_id,") {
                return Err(bad(1, "missing header".to_owned()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(idx + 1, format!("expected 6 fields, got {}", f.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| bad(idx + 1, format!("bad number {s:?}")))
        };
        let p50 = num(f[1])?;
        let p75 = num(f[2])?;
        if p50 > p75 {
            return Err(bad(idx + 1, "p50 exceeds p75".to_owned()));
        }
        rows.push(AlarmThresholds {
            segment: SegmentId::from(f[0]),
            p50,
            p75,
            sample_count: f[3]
                .parse()
                .map_err(|_| bad(idx + 1, "bad sample count".to_owned()))?,
            window: (
                timefmt::parse_instant(f[4]).map_err(|e| bad(idx + 1, e))?,
                timefmt::parse_instant(f[5]).map_err(|e| bad(idx + 1, e))?,
            ),
        });
    }
    Ok(rows)
}

/// Standard normal pdf.
fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal cdf via the complementary error function.
fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

// ln Phi(z); asymptotic expansion below z = -30 where erfc underflows.
fn ln_norm_cdf(z: f64) -> f64 {
    if z > -30.0 {
        norm_cdf(z).ln()
    } else {
        let z2 = z * z;
        -0.5 * z2 - (-z).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// Skew-normal distribution with location, scale and shape parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewNormalParams {
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
}

impl SkewNormalParams {
    pub fn new(location: f64, scale: f64, shape: f64) -> Result<Self, AlarmError> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(AlarmError::InvalidScale(scale));
        }
        Ok(SkewNormalParams {
            location,
            scale,
            shape,
        })
    }

    fn delta(&self) -> f64 {
        self.shape / (1.0 + self.shape * self.shape).sqrt()
    }

    /// Density `(2/omega) * phi(z) * Phi(alpha z)` with `z = (x-eta)/omega`.
    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.location) / self.scale;
        2.0 / self.scale * norm_pdf(z) * norm_cdf(self.shape * z)
    }

    /// Log density, stable far into the tails.
    pub fn log_pdf(&self, x: f64) -> f64 {
        let z = (x - self.location) / self.scale;
        std::f64::consts::LN_2
            - self.scale.ln()
            - 0.5 * z * z
            - 0.5 * (2.0 * std::f64::consts::PI).ln()
            + ln_norm_cdf(self.shape * z)
    }

    /// Distribution mean and standard deviation:
    /// mean = eta + omega*delta*sqrt(2/pi), std = omega*sqrt(1 - 2 delta^2/pi)
    /// with delta = alpha / sqrt(1 + alpha^2).
    pub fn moments(&self) -> (f64, f64) {
        let d = self.delta();
        let mean = self.location + self.scale * d * (2.0 / std::f64::consts::PI).sqrt();
        let std = self.scale * (1.0 - 2.0 * d * d / std::f64::consts::PI).sqrt();
        (mean, std)
    }

    /// Draw one value via the two-correlated-normals construction:
    /// `delta*|z1| + sqrt(1-delta^2)*z2` is standard skew-normal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let d = self.delta();
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let standard = d * z1.abs() + (1.0 - d * d).sqrt() * z2;
        self.location + self.scale * standard
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

// Largest |skewness| a skew normal can attain (delta -> 1); method-of-moments
// estimates get clamped inside this range.
const MAX_ABS_SKEWNESS: f64 = 0.9952717464311565;

/// Method-of-moments starting point for the likelihood optimization.
fn moment_estimate(samples: &[f64]) -> SkewNormalParams {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let m2 = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = samples.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    let skew = (m3 / m2.powf(1.5)).clamp(-0.99 * MAX_ABS_SKEWNESS, 0.99 * MAX_ABS_SKEWNESS);

    // invert skew = ((4-pi)/2) * (delta*sqrt(2/pi))^3 / (1 - 2 delta^2/pi)^1.5:
    // delta^2 = (pi/2) * k / (k + ((4-pi)/2)^(2/3)) with k = |skew|^(2/3)
    let k = skew.abs().powf(2.0 / 3.0);
    let c = ((4.0 - std::f64::consts::PI) / 2.0).powf(2.0 / 3.0);
    let delta2 = (std::f64::consts::FRAC_PI_2 * k / (k + c)).min(0.999_999);
    let delta = skew.signum() * delta2.sqrt();
    let shape = delta / (1.0 - delta * delta).sqrt();
    let scale = (m2 / (1.0 - 2.0 * delta * delta / std::f64::consts::PI)).sqrt();
    let location = mean - scale * delta * (2.0 / std::f64::consts::PI).sqrt();
    SkewNormalParams {
        location,
        scale: scale.max(1e-12),
        shape,
    }
}

/// Maximum-likelihood skew-normal fit.
///
/// Minimizes the negative mean log-likelihood over (location, ln scale,
/// shape) with Nelder–Mead, started from the method-of-moments estimate.
/// Needs at least 50 samples with nonzero spread.
pub fn fit_skew_normal(samples: &[f64]) -> Result<SkewNormalParams, AlarmError> {
    if samples.len() < 50 {
        return Err(AlarmError::DegenerateSample(format!(
            "need at least 50 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(AlarmError::DegenerateSample("non-finite sample".to_owned()));
    }
    let (min, max) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if min >= max {
        return Err(AlarmError::DegenerateSample("zero variance".to_owned()));
    }

    let start = moment_estimate(samples);
    let objective = |p: &[f64; 3]| {
        let params = SkewNormalParams {
            location: p[0],
            scale: p[1].exp(),
            shape: p[2],
        };
        -samples.iter().map(|&x| params.log_pdf(x)).sum::<f64>() / samples.len() as f64
    };
    let x0 = [start.location, start.scale.ln(), start.shape];
    let steps = [0.1 * start.scale, 0.1, 0.25];
    let (best, iterations, converged) = nelder_mead(objective, x0, steps, 5000, 1e-11);
    if !converged {
        return Err(AlarmError::NonConvergence(iterations));
    }
    SkewNormalParams::new(best[0], best[1].exp(), best[2])
}

// Standard Nelder-Mead on a 3-parameter objective. Returns (best point,
// iterations, converged flag); convergence is an absolute spread of the
// simplex objective values below `ftol` scaled by the best value.
fn nelder_mead<F: Fn(&[f64; 3]) -> f64>(
    f: F,
    x0: [f64; 3],
    steps: [f64; 3],
    max_iter: usize,
    ftol: f64,
) -> ([f64; 3], usize, bool) {
    const ALPHA: f64 = 1.0; // reflect
    const GAMMA: f64 = 2.0; // expand
    const RHO: f64 = 0.5; // contract
    const SIGMA: f64 = 0.5; // shrink

    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    simplex.push((x0, f(&x0)));
    for i in 0..3 {
        let mut v = x0;
        v[i] += if steps[i] != 0.0 { steps[i] } else { 0.1 };
        simplex.push((v, f(&v)));
    }

    for iter in 0..max_iter {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("objective must not be NaN"));
        let spread = simplex[3].1 - simplex[0].1;
        if spread <= ftol * (1.0 + simplex[0].1.abs()) {
            return (simplex[0].0, iter, true);
        }

        let mut centroid = [0.0; 3];
        for v in &simplex[..3] {
            for (c, &x) in centroid.iter_mut().zip(&v.0) {
                *c += x / 3.0;
            }
        }
        let worst = simplex[3];
        let point = |coef: f64| {
            let mut p = [0.0; 3];
            for k in 0..3 {
                p[k] = centroid[k] + coef * (centroid[k] - worst.0[k]);
            }
            p
        };

        let reflected = point(ALPHA);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = point(GAMMA);
            let fe = f(&expanded);
            simplex[3] = if fe < fr {
                (expanded, fe)
            } else {
                (reflected, fr)
            };
        } else if fr < simplex[2].1 {
            simplex[3] = (reflected, fr);
        } else {
            let contracted = if fr < worst.1 {
                point(RHO)
            } else {
                point(-RHO)
            };
            let fc = f(&contracted);
            if fc < worst.1.min(fr) {
                simplex[3] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for entry in &mut simplex[1..] {
                    let mut v = [0.0; 3];
                    for ((out, &b), &e) in v.iter_mut().zip(&best).zip(&entry.0) {
                        *out = b + SIGMA * (e - b);
                    }
                    *entry = (v, f(&v));
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("objective must not be NaN"));
    (simplex[0].0, max_iter, false)
}

/// 3×3 confusion matrix of true versus predicted alarm levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix3 {
    counts: [[u64; 3]; 3],
}

impl ConfusionMatrix3 {
    pub fn counts(&self) -> &[[u64; 3]; 3] {
        &self.counts
    }

    pub fn count(&self, truth: AlarmLevel, predicted: AlarmLevel) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn truth_total(&self, truth: AlarmLevel) -> u64 {
        self.counts[truth.index()].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Per-class recall, None when the class never occurs in the truth.
    pub fn recall(&self, level: AlarmLevel) -> Option<f64> {
        let row_sum = self.truth_total(level);
        if row_sum == 0 {
            None
        } else {
            Some(self.count(level, level) as f64 / row_sum as f64)
        }
    }

    pub fn is_diagonal(&self) -> bool {
        AlarmLevel::ALL.iter().all(|&t| {
            AlarmLevel::ALL
                .iter()
                .all(|&p| t == p || self.count(t, p) == 0)
        })
    }
}

/// Tally (true, predicted) level pairs into a confusion matrix.
pub fn evaluate(
    true_levels: &[AlarmLevel],
    pred_levels: &[AlarmLevel],
) -> Result<ConfusionMatrix3, AlarmError> {
    if true_levels.len() != pred_levels.len() {
        return Err(AlarmError::LengthMismatch(
            true_levels.len(),
            pred_levels.len(),
        ));
    }
    let mut counts = [[0u64; 3]; 3];
    for (t, p) in true_levels.iter().zip(pred_levels) {
        counts[t.index()][p.index()] += 1;
    }
    Ok(ConfusionMatrix3 { counts })
}
