//! Flux-record parsing, matrix assembly, supervised windowing, and
//! per-segment normalization.
//!
//! The central dataset is the [`TrafficMatrix`]: a dense time-bin × segment
//! grid of vehicle counts at a fixed 10-minute step, with an observation
//! mask for cells no record covered. Records flow in as line-oriented CSV
//! (`timestamp,segment_id,count`), get assembled into a gap-free time axis,
//! imputed, normalized, and cut into supervised windows for the forecaster.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use chrono::{DateTime, Duration, Utc};

use crate::timefmt;

/// Seconds per time bin. The whole pipeline is built around 10-minute data.
pub const STEP_SECONDS: i64 = 600;

/// Opaque road-segment identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SegmentId(pub String);

impl SegmentId {
    pub fn new(id: impl Into<String>) -> Self {
        SegmentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SegmentId {
    fn from(s: &str) -> Self {
        SegmentId(s.to_owned())
    }
}

/// One observed flux count: vehicles through a segment in one 10-minute bin.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxRecord {
    pub timestamp: DateTime<Utc>,
    pub segment: SegmentId,
    pub count: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("duplicate cell at {time} for segment {segment}")]
    DuplicateCell {
        time: DateTime<Utc>,
        segment: SegmentId,
    },
    #[error("no records to assemble")]
    EmptyInput,
    #[error("segment {0} has no observed values")]
    EmptySegment(SegmentId),
    #[error("segment {0} not present in matrix")]
    SegmentNotFound(SegmentId),
    #[error("need at least {needed} time bins, matrix has {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("matrix has unobserved cells; impute before this operation")]
    NotImputed,
    #[error("matrix file line {line}: {reason}")]
    BadMatrixFile { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense time × segment grid of flux counts with an observation mask.
///
/// Row t, column s holds the count for `segments[s]` in the bin starting at
/// `start + t * 600s`. `mask` is true where a record was observed; after
/// [`impute`] the mask is all-true and values may be treated as complete.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficMatrix {
    start: DateTime<Utc>,
    step_seconds: i64,
    segments: Vec<SegmentId>,
    values: Vec<f64>,
    mask: Vec<bool>,
    n_times: usize,
}

impl TrafficMatrix {
    /// Assemble a matrix from raw parts. Internal + test constructor;
    /// enforces the dimension and duplicate-segment invariants.
    pub fn from_parts(
        start: DateTime<Utc>,
        segments: Vec<SegmentId>,
        values: Vec<f64>,
        mask: Vec<bool>,
    ) -> Self {
        assert_eq!(
            values.len(),
            mask.len(),
            "values and mask dimensions differ"
        );
        assert!(!segments.is_empty(), "matrix needs at least one segment");
        assert_eq!(values.len() % segments.len(), 0, "values not a whole grid");
        let mut seen = HashMap::new();
        for s in &segments {
            assert!(seen.insert(s, ()).is_none(), "duplicate segment {s}");
        }
        let n_times = values.len() / segments.len();
        for (v, &m) in values.iter().zip(&mask) {
            if m {
                assert!(
                    v.is_finite() && *v >= 0.0,
                    "observed cell must be finite non-negative"
                );
            }
        }
        TrafficMatrix {
            start,
            step_seconds: STEP_SECONDS,
            segments,
            values,
            mask,
            n_times,
        }
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn step_seconds(&self) -> i64 {
        self.step_seconds
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn segments(&self) -> &[SegmentId] {
        &self.segments
    }

    pub fn segment_index(&self, id: &SegmentId) -> Option<usize> {
        self.segments.iter().position(|s| s == id)
    }

    /// Instant at which time-bin `t` starts.
    pub fn time_at(&self, t: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(self.step_seconds * t as i64)
    }

    pub fn is_observed(&self, t: usize, s: usize) -> bool {
        self.mask[t * self.segments.len() + s]
    }

    /// Raw cell value regardless of mask state.
    pub fn value(&self, t: usize, s: usize) -> f64 {
        self.values[t * self.segments.len() + s]
    }

    /// Cell value if observed.
    pub fn get(&self, t: usize, s: usize) -> Option<f64> {
        if self.is_observed(t, s) {
            Some(self.value(t, s))
        } else {
            None
        }
    }

    /// Row `t` as a slice over all segments.
    pub fn row(&self, t: usize) -> &[f64] {
        let s = self.segments.len();
        &self.values[t * s..(t + 1) * s]
    }

    pub fn fully_observed(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// One segment's series as (instant, value) pairs, observed cells only.
    pub fn segment_series(&self, s: usize) -> Vec<(DateTime<Utc>, f64)> {
        (0..self.n_times)
            .filter(|&t| self.is_observed(t, s))
            .map(|t| (self.time_at(t), self.value(t, s)))
            .collect()
    }

    /// Sub-matrix over time rows [from, to).
    pub fn slice_rows(&self, from: usize, to: usize) -> TrafficMatrix {
        assert!(
            from < to && to <= self.n_times,
            "row range {from}..{to} out of bounds"
        );
        let s = self.segments.len();
        TrafficMatrix {
            start: self.time_at(from),
            step_seconds: self.step_seconds,
            segments: self.segments.clone(),
            values: self.values[from * s..to * s].to_vec(),
            mask: self.mask[from * s..to * s].to_vec(),
            n_times: to - from,
        }
    }

    /// Index of the first bin at or after `instant`, if any.
    pub fn bin_at_or_after(&self, instant: DateTime<Utc>) -> Option<usize> {
        if instant <= self.start {
            return Some(0);
        }
        let offset = (instant - self.start).num_seconds();
        let bin = (offset + self.step_seconds - 1) / self.step_seconds;
        usize::try_from(bin).ok().filter(|&b| b < self.n_times)
    }
}

/// Parse line-oriented `timestamp,segment_id,count` CSV into flux records.
///
/// Timestamps must be RFC-3339 UTC on an exact 10-minute boundary and counts
/// non-negative integers; any violating line is an error, not a silent skip.
/// With `has_header` the first line is discarded unparsed.
pub fn parse_records<R: BufRead>(
    reader: R,
    has_header: bool,
) -> Result<Vec<FluxRecord>, DataError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if idx == 0 && has_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record_line(&line, line_no)?);
    }
    Ok(records)
}

fn parse_record_line(line: &str, line_no: usize) -> Result<FluxRecord, DataError> {
    let malformed = |reason: String| DataError::MalformedLine {
        line: line_no,
        reason,
    };
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 3 {
        return Err(malformed(format!(
            "expected 3 fields, got {}",
            fields.len()
        )));
    }
    let timestamp = timefmt::parse_instant(fields[0].trim()).map_err(&malformed)?;
    if !timefmt::is_ten_min_aligned(timestamp) {
        return Err(malformed(format!(
            "timestamp {} not aligned to a 10-minute boundary",
            fields[0].trim()
        )));
    }
    let segment = fields[1].trim();
    if segment.is_empty() {
        return Err(malformed("empty segment id".to_owned()));
    }
    if segment.chars().any(char::is_whitespace) {
        return Err(malformed(format!(
            "segment id {segment:?} contains whitespace"
        )));
    }
    let count: u32 = fields[2].trim().parse().map_err(|_| {
        malformed(format!(
            "count {:?} is not a non-negative integer",
            fields[2].trim()
        ))
    })?;
    Ok(FluxRecord {
        timestamp,
        segment: SegmentId::new(segment),
        count,
    })
}

/// Assemble records into a gap-free matrix spanning [min, max] timestamps.
///
/// Segments are ordered by first appearance in the record stream. Cells no
/// record covers are mask-false; the same (time, segment) twice is an error.
pub fn build_matrix(records: &[FluxRecord]) -> Result<TrafficMatrix, DataError> {
    if records.is_empty() {
        return Err(DataError::EmptyInput);
    }
    let start = records
        .iter()
        .map(|r| r.timestamp)
        .min()
        .expect("non-empty");
    let end = records
        .iter()
        .map(|r| r.timestamp)
        .max()
        .expect("non-empty");
    let n_times = ((end - start).num_seconds() / STEP_SECONDS) as usize + 1;

    let mut segments = Vec::new();
    let mut index = HashMap::new();
    for r in records {
        if !index.contains_key(&r.segment) {
            index.insert(r.segment.clone(), segments.len());
            segments.push(r.segment.clone());
        }
    }

    let n_segments = segments.len();
    let mut values = vec![0.0; n_times * n_segments];
    let mut mask = vec![false; n_times * n_segments];
    for r in records {
        let t = ((r.timestamp - start).num_seconds() / STEP_SECONDS) as usize;
        let s = index[&r.segment];
        let cell = t * n_segments + s;
        if mask[cell] {
            return Err(DataError::DuplicateCell {
                time: r.timestamp,
                segment: r.segment.clone(),
            });
        }
        values[cell] = f64::from(r.count);
        mask[cell] = true;
    }

    Ok(TrafficMatrix {
        start,
        step_seconds: STEP_SECONDS,
        segments,
        values,
        mask,
        n_times,
    })
}

/// Fill unobserved cells by forward-fill, backfilling any leading gap with
/// the segment's first observed value. The result is fully observed; a
/// segment with no observations at all is an error.
pub fn impute(matrix: &TrafficMatrix) -> Result<TrafficMatrix, DataError> {
    let (n_times, n_segments) = (matrix.n_times, matrix.n_segments());
    let mut values = matrix.values.clone();
    for s in 0..n_segments {
        let first_observed = (0..n_times)
            .find(|&t| matrix.is_observed(t, s))
            .ok_or_else(|| DataError::EmptySegment(matrix.segments[s].clone()))?;
        let mut last = matrix.value(first_observed, s);
        for t in 0..n_times {
            if matrix.is_observed(t, s) {
                last = matrix.value(t, s);
            } else {
                values[t * n_segments + s] = last;
            }
        }
    }
    Ok(TrafficMatrix {
        start: matrix.start,
        step_seconds: matrix.step_seconds,
        segments: matrix.segments.clone(),
        values,
        mask: vec![true; n_times * n_segments],
        n_times,
    })
}

/// Supervised windows for one target segment.
///
/// Window i covers input rows [i, i+lookback) over every segment and target
/// rows [i+lookback, i+lookback+horizon) of the target column only. Inputs
/// are stored row-major `lookback × n_segments`. `target_times[i]` is the
/// instant of the window's last predicted step — the 30-minute-ahead bin at
/// the default horizon of 3.
#[derive(Debug, Clone)]
pub struct SupervisedWindowSet {
    pub target_segment: SegmentId,
    pub lookback: usize,
    pub horizon: usize,
    pub n_segments: usize,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub target_times: Vec<DateTime<Utc>>,
}

impl SupervisedWindowSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Cut a fully-imputed matrix into stride-1 supervised windows.
pub fn make_windows(
    matrix: &TrafficMatrix,
    target: &SegmentId,
    lookback: usize,
    horizon: usize,
) -> Result<SupervisedWindowSet, DataError> {
    assert!(
        lookback > 0 && horizon > 0,
        "lookback and horizon must be positive"
    );
    if !matrix.fully_observed() {
        return Err(DataError::NotImputed);
    }
    let target_col = matrix
        .segment_index(target)
        .ok_or_else(|| DataError::SegmentNotFound(target.clone()))?;
    let needed = lookback + horizon;
    if needed > matrix.n_times {
        return Err(DataError::InsufficientHistory {
            needed,
            available: matrix.n_times,
        });
    }

    let n_windows = matrix.n_times - lookback - horizon + 1;
    let n_segments = matrix.n_segments();
    let mut inputs = Vec::with_capacity(n_windows);
    let mut targets = Vec::with_capacity(n_windows);
    let mut target_times = Vec::with_capacity(n_windows);
    for i in 0..n_windows {
        let mut grid = Vec::with_capacity(lookback * n_segments);
        for t in i..i + lookback {
            grid.extend_from_slice(matrix.row(t));
        }
        inputs.push(grid);
        targets.push(
            (0..horizon)
                .map(|k| matrix.value(i + lookback + k, target_col))
                .collect(),
        );
        target_times.push(matrix.time_at(i + lookback + horizon - 1));
    }

    Ok(SupervisedWindowSet {
        target_segment: target.clone(),
        lookback,
        horizon,
        n_segments,
        inputs,
        targets,
        target_times,
    })
}

/// Per-segment z-score statistics. Stds are floored at [`NormStats::STD_FLOOR`]
/// so constant columns normalize to zero instead of dividing by zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub per_segment_mean: Vec<f64>,
    pub per_segment_std: Vec<f64>,
}

impl NormStats {
    pub const STD_FLOOR: f64 = 1e-6;

    pub fn n_segments(&self) -> usize {
        self.per_segment_mean.len()
    }
}

/// Population mean/std per segment column of a fully-imputed matrix.
pub fn fit_norm(matrix: &TrafficMatrix) -> Result<NormStats, DataError> {
    if !matrix.fully_observed() {
        return Err(DataError::NotImputed);
    }
    let (n_times, n_segments) = (matrix.n_times, matrix.n_segments());
    let mut mean = vec![0.0; n_segments];
    let mut std = vec![0.0; n_segments];
    for s in 0..n_segments {
        let sum: f64 = (0..n_times).map(|t| matrix.value(t, s)).sum();
        mean[s] = sum / n_times as f64;
        let var: f64 = (0..n_times)
            .map(|t| (matrix.value(t, s) - mean[s]).powi(2))
            .sum::<f64>()
            / n_times as f64;
        std[s] = var.sqrt().max(NormStats::STD_FLOOR);
    }
    Ok(NormStats {
        per_segment_mean: mean,
        per_segment_std: std,
    })
}

/// Map every column to (x − mean) / std.
pub fn apply_norm(matrix: &TrafficMatrix, stats: &NormStats) -> TrafficMatrix {
    assert_eq!(
        stats.n_segments(),
        matrix.n_segments(),
        "stats fitted on a different segment set"
    );
    let n_segments = matrix.n_segments();
    let values = matrix
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let s = i % n_segments;
            (v - stats.per_segment_mean[s]) / stats.per_segment_std[s]
        })
        .collect();
    TrafficMatrix {
        start: matrix.start,
        step_seconds: matrix.step_seconds,
        segments: matrix.segments.clone(),
        values,
        mask: matrix.mask.clone(),
        n_times: matrix.n_times,
    }
}

/// Undo [`apply_norm`] for values belonging to segment column `segment`.
pub fn invert_norm(values: &[f64], stats: &NormStats, segment: usize) -> Vec<f64> {
    let (m, sd) = (
        stats.per_segment_mean[segment],
        stats.per_segment_std[segment],
    );
    values.iter().map(|v| v * sd + m).collect()
}

/// Write the versioned columnar matrix file.
///
/// Header `fluxmatrix v1 <start> <step_seconds> <S> <T>`, one line of segment
/// ids, then T rows of S integers; `-1` encodes an unobserved cell. Only
/// integral-valued matrices (raw counts) serialize; normalized matrices are
/// in-memory objects.
pub fn write_fluxmatrix<W: Write>(matrix: &TrafficMatrix, mut w: W) -> Result<(), DataError> {
    writeln!(
        w,
        "fluxmatrix v1 {} {} {} {}",
        timefmt::format_instant(matrix.start),
        matrix.step_seconds,
        matrix.n_segments(),
        matrix.n_times
    )?;
    let ids: Vec<&str> = matrix.segments.iter().map(|s| s.as_str()).collect();
    writeln!(w, "{}", ids.join(" "))?;
    let mut row = String::new();
    for t in 0..matrix.n_times {
        row.clear();
        for s in 0..matrix.n_segments() {
            if s > 0 {
                row.push(' ');
            }
            match matrix.get(t, s) {
                Some(v) => {
                    debug_assert!(v.fract() == 0.0, "fluxmatrix stores integer counts");
                    row.push_str(&format!("{}", v as i64));
                }
                None => row.push_str("-1"),
            }
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

/// Read a `fluxmatrix v1` file back into a matrix.
pub fn read_fluxmatrix<R: BufRead>(reader: R) -> Result<TrafficMatrix, DataError> {
    let bad = |line: usize, reason: &str| DataError::BadMatrixFile {
        line,
        reason: reason.to_owned(),
    };
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
    let header = header?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 6 || parts[0] != "fluxmatrix" || parts[1] != "v1" {
        return Err(bad(
            1,
            "expected header `fluxmatrix v1 <start> <step> <S> <T>`",
        ));
    }
    let start = timefmt::parse_instant(parts[2])
        .map_err(|e| DataError::BadMatrixFile { line: 1, reason: e })?;
    let step: i64 = parts[3].parse().map_err(|_| bad(1, "bad step"))?;
    if step != STEP_SECONDS {
        return Err(bad(1, "unsupported step (must be 600)"));
    }
    let n_segments: usize = parts[4].parse().map_err(|_| bad(1, "bad segment count"))?;
    let n_times: usize = parts[5].parse().map_err(|_| bad(1, "bad time count"))?;
    if n_segments == 0 || n_times == 0 {
        return Err(bad(1, "empty matrix dimensions"));
    }

    let (_, seg_line) = lines.next().ok_or_else(|| bad(2, "missing segment line"))?;
    let seg_line = seg_line?;
    let segments: Vec<SegmentId> = seg_line.split_whitespace().map(SegmentId::from).collect();
    if segments.len() != n_segments {
        return Err(bad(2, "segment line does not match declared count"));
    }
    let mut seen = HashMap::new();
    for s in &segments {
        if seen.insert(s, ()).is_some() {
            return Err(bad(2, "duplicate segment id"));
        }
    }

    let mut values = vec![0.0; n_times * n_segments];
    let mut mask = vec![false; n_times * n_segments];
    for t in 0..n_times {
        let (idx, row) = lines.next().ok_or_else(|| bad(t + 3, "missing data row"))?;
        let row = row?;
        let mut filled = 0;
        for (s, tok) in row.split_whitespace().enumerate() {
            if s >= n_segments {
                return Err(bad(idx + 1, "too many columns"));
            }
            let v: i64 = tok
                .parse()
                .map_err(|_| bad(idx + 1, "cells must be integers (-1 = missing)"))?;
            if v >= 0 {
                values[t * n_segments + s] = v as f64;
                mask[t * n_segments + s] = true;
            } else if v != -1 {
                return Err(bad(idx + 1, "negative count other than -1 sentinel"));
            }
            filled += 1;
        }
        if filled != n_segments {
            return Err(bad(idx + 1, "too few columns"));
        }
    }

    Ok(TrafficMatrix {
        start,
        step_seconds: STEP_SECONDS,
        segments,
        values,
        mask,
        n_times,
    })
}
