//! `fluxwarn thresholds`: per-segment p50/p75 alarm thresholds from daytime
//! flux history.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use fluxwarn_core::alarm::{compute_thresholds, write_thresholds_csv};
use fluxwarn_core::timefmt;
use fluxwarn_core::SegmentId;

use crate::ioutil::OutputSet;
use crate::manifest::RunManifest;

#[derive(Debug, Args)]
pub struct ThresholdsArgs {
    /// Traffic data (flux CSV or fluxmatrix file)
    #[arg(long)]
    pub data: PathBuf,
    /// Thresholds CSV output
    #[arg(long)]
    pub out: PathBuf,
    /// Compute thresholds as of this instant (default: last timestamp in the data)
    #[arg(long)]
    pub as_of: Option<String>,
    /// Restrict to these comma-separated segments (default: all)
    #[arg(long)]
    pub segments: Option<String>,
    /// CSV input has no header line
    #[arg(long)]
    pub no_header: bool,
}

pub fn run(args: &ThresholdsArgs, outputs: &mut OutputSet) -> Result<()> {
    let matrix = crate::ioutil::load_traffic(&args.data, !args.no_header)?;
    let as_of = match &args.as_of {
        Some(t) => timefmt::parse_instant(t).map_err(|e| anyhow::anyhow!(e))?,
        None => matrix.time_at(matrix.n_times() - 1),
    };

    let selected: Vec<SegmentId> = match &args.segments {
        None => matrix.segments().to_vec(),
        Some(list) => list
            .split(',')
            .map(str::trim)
            .map(SegmentId::from)
            .collect(),
    };

    let mut rows = Vec::with_capacity(selected.len());
    for id in &selected {
        let col = matrix
            .segment_index(id)
            .with_context(|| format!("segment {id} not present in {}", args.data.display()))?;
        let series = matrix.segment_series(col);
        let th = compute_thresholds(id, &series, as_of)
            .with_context(|| format!("computing thresholds for {id}"))?;
        rows.push(th);
    }

    outputs.write(&args.out, |w| Ok(write_thresholds_csv(&rows, &mut *w)?))?;

    let mut manifest = RunManifest::new("thresholds");
    manifest
        .input(&args.data)
        .flag("as_of", timefmt::format_instant(as_of))
        .flag("segments", rows.len());
    manifest.write(&args.out, outputs)
}
