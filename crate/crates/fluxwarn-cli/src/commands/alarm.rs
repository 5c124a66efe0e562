//! `fluxwarn alarm`: forecast every evaluation instant and classify the
//! predicted 30-minute-ahead flux against per-segment thresholds.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use clap::Args;

use fluxwarn_core::alarm::{classify, read_thresholds_csv, AlarmThresholds};
use fluxwarn_core::data::impute;
use fluxwarn_core::forecast::{predict, read_model, ForecastModel};
use fluxwarn_core::timefmt;
use fluxwarn_core::TrafficMatrix;

use crate::ioutil::{write_level_table, LevelRow, OutputSet};
use crate::manifest::RunManifest;

#[derive(Debug, Args)]
pub struct AlarmArgs {
    /// Trained fluxmodel file
    #[arg(long)]
    pub model: PathBuf,
    /// Traffic data covering the evaluation window
    #[arg(long)]
    pub data: PathBuf,
    /// Thresholds CSV from `fluxwarn thresholds`
    #[arg(long)]
    pub thresholds: PathBuf,
    /// Level table output
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluate only instants at or after this time
    #[arg(long)]
    pub start: Option<String>,
    /// Evaluate only instants at or before this time
    #[arg(long)]
    pub end: Option<String>,
    /// CSV input has no header line
    #[arg(long)]
    pub no_header: bool,
}

/// Reorder the matrix columns to the model's segment order; every model
/// segment must be present in the data.
fn align_to_model(matrix: &TrafficMatrix, model: &ForecastModel) -> Result<TrafficMatrix> {
    if matrix.n_segments() != model.segments.len() {
        bail!(
            "schema mismatch: model has {} segments, data has {}",
            model.segments.len(),
            matrix.n_segments()
        );
    }
    let permutation: Vec<usize> = model
        .segments
        .iter()
        .map(|id| {
            matrix
                .segment_index(id)
                .with_context(|| format!("schema mismatch: model segment {id} missing from data"))
        })
        .collect::<Result<_>>()?;
    if permutation.iter().enumerate().all(|(i, &p)| i == p) {
        return Ok(matrix.clone());
    }
    let (n_times, n_segments) = (matrix.n_times(), matrix.n_segments());
    let mut values = Vec::with_capacity(n_times * n_segments);
    let mut mask = Vec::with_capacity(n_times * n_segments);
    for t in 0..n_times {
        for &src in &permutation {
            values.push(matrix.value(t, src));
            mask.push(matrix.is_observed(t, src));
        }
    }
    Ok(TrafficMatrix::from_parts(
        matrix.start(),
        model.segments.clone(),
        values,
        mask,
    ))
}

fn parse_bound(text: &Option<String>) -> Result<Option<DateTime<Utc>>> {
    match text {
        None => Ok(None),
        Some(t) => timefmt::parse_instant(t)
            .map(Some)
            .map_err(|e| anyhow::anyhow!(e)),
    }
}

pub fn run(args: &AlarmArgs, outputs: &mut OutputSet) -> Result<()> {
    let model_file =
        File::open(&args.model).with_context(|| format!("opening {}", args.model.display()))?;
    let model = read_model(BufReader::new(model_file))
        .with_context(|| format!("reading {}", args.model.display()))?;

    let thresholds_file = File::open(&args.thresholds)
        .with_context(|| format!("opening {}", args.thresholds.display()))?;
    let thresholds = read_thresholds_csv(BufReader::new(thresholds_file))
        .with_context(|| format!("reading {}", args.thresholds.display()))?;
    let target_thresholds: &AlarmThresholds = thresholds
        .iter()
        .find(|t| t.segment == model.target_segment)
        .with_context(|| {
            format!(
                "schema mismatch: no thresholds for target segment {}",
                model.target_segment
            )
        })?;

    let matrix = crate::ioutil::load_traffic(&args.data, !args.no_header)?;
    let matrix = align_to_model(&matrix, &model)?;
    let filled = impute(&matrix)?;

    let start = parse_bound(&args.start)?;
    let end = parse_bound(&args.end)?;
    let target_col = model.target_index();
    let span = model.lookback + model.horizon;
    if filled.n_times() < span {
        bail!(
            "data has {} bins, model needs at least {span}",
            filled.n_times()
        );
    }

    let n_segments = filled.n_segments();
    let mut rows = Vec::new();
    let mut window = vec![0.0; model.lookback * n_segments];
    for i in 0..=filled.n_times() - span {
        let eval_time = filled.time_at(i + span - 1);
        if start.is_some_and(|s| eval_time < s) || end.is_some_and(|e| eval_time > e) {
            continue;
        }
        for (r, row) in (i..i + model.lookback).enumerate() {
            window[r * n_segments..(r + 1) * n_segments].copy_from_slice(filled.row(row));
        }
        let pred = predict(&model, &window, true)?;
        let pred_flux = pred[model.horizon - 1];
        let true_flux = filled.value(i + span - 1, target_col);
        rows.push(LevelRow {
            time: eval_time,
            segment: model.target_segment.to_string(),
            true_flux,
            pred_flux,
            true_level: classify(true_flux, target_thresholds),
            pred_level: classify(pred_flux, target_thresholds),
        });
    }

    outputs.write(&args.out, |w| write_level_table(&rows, w))?;

    let mut manifest = RunManifest::new("alarm");
    manifest
        .input(&args.model)
        .input(&args.data)
        .input(&args.thresholds)
        .flag("target", &model.target_segment)
        .flag("rows", rows.len());
    if let Some(s) = &args.start {
        manifest.flag("start", s);
    }
    if let Some(e) = &args.end {
        manifest.flag("end", e);
    }
    manifest.write(&args.out, outputs)
}
