//! `fluxwarn correlate`: lag scan and per-day correlation between a traffic
//! segment and an hourly pollution series.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;

use fluxwarn_core::correlation::{daily_correlation, lag_scan, rebin_to_hourly};
use fluxwarn_core::data::impute;
use fluxwarn_core::SegmentId;

use crate::ioutil::OutputSet;
use crate::manifest::RunManifest;

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Traffic data (flux CSV or fluxmatrix file)
    #[arg(long)]
    pub traffic: PathBuf,
    /// Hourly pollution CSV (`timestamp,value`)
    #[arg(long)]
    pub pollution: PathBuf,
    /// Traffic segment to correlate
    #[arg(long)]
    pub segment: String,
    #[arg(long, default_value_t = 24)]
    pub max_lag: i64,
    /// Lag-scan CSV output (`lag,rho`)
    #[arg(long)]
    pub out_lag: PathBuf,
    /// Per-day CSV output (`date,rho`); rho is empty on undefined days
    #[arg(long)]
    pub out_daily: PathBuf,
    /// CSV input has no header line
    #[arg(long)]
    pub no_header: bool,
}

pub fn run(args: &CorrelateArgs, outputs: &mut OutputSet) -> Result<()> {
    let matrix = crate::ioutil::load_traffic(&args.traffic, !args.no_header)?;
    let filled = impute(&matrix)?;
    let traffic = rebin_to_hourly(&filled, &SegmentId::new(args.segment.clone()))?;
    let pollution = crate::ioutil::load_hourly(&args.pollution)?;

    let scan = lag_scan(&traffic, &pollution, args.max_lag)?;
    outputs.write(&args.out_lag, |w| {
        writeln!(w, "lag,rho")?;
        for (lag, rho) in scan.lags.iter().zip(&scan.rho) {
            writeln!(w, "{lag},{rho}")?;
        }
        Ok(())
    })?;

    let daily = daily_correlation(&traffic, &pollution)?;
    outputs.write(&args.out_daily, |w| {
        writeln!(w, "date,rho")?;
        for day in &daily {
            match day.rho {
                Some(rho) => writeln!(w, "{},{rho}", day.date)?,
                None => writeln!(w, "{},", day.date)?,
            }
        }
        Ok(())
    })?;

    let mut manifest = RunManifest::new("correlate");
    manifest
        .input(&args.traffic)
        .input(&args.pollution)
        .flag("segment", &args.segment)
        .flag("max_lag", args.max_lag)
        .flag("best_lag", scan.best_lag);
    manifest.write(&args.out_lag, outputs)
}
