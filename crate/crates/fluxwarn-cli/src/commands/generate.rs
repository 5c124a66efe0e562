//! `fluxwarn generate`: synthesize a city's traffic data, optionally with a
//! coupled pollution channel.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use fluxwarn_core::data::write_fluxmatrix;
use fluxwarn_core::synthetic::{generate_pollution, generate_traffic, CitySpec};
use fluxwarn_core::timefmt;
use fluxwarn_core::{correlation::rebin_to_hourly, SegmentId};

use crate::ioutil::{write_hourly_csv, OutputSet};
use crate::manifest::RunManifest;

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Traffic output file
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 24)]
    pub segments: usize,
    #[arg(long, default_value_t = 10)]
    pub weeks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reference vehicles-per-10-minutes scale; per-segment scales spread around it
    #[arg(long, default_value_t = 120.0)]
    pub base_scale: f64,
    #[arg(long, default_value_t = 0.5)]
    pub weekend_factor: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 2.0)]
    pub skewness: f64,
    /// Traffic file format
    #[arg(long, value_parser = ["csv", "fluxmatrix"], default_value = "csv")]
    pub format: String,
    /// Also write an hourly pollution CSV coupled to one segment
    #[arg(long)]
    pub pollution: Option<PathBuf>,
    /// Segment the pollution channel couples to (default: first segment)
    #[arg(long)]
    pub pollution_segment: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    pub background: f64,
    #[arg(long, default_value_t = 0.05)]
    pub coupling: f64,
    #[arg(long, default_value_t = 4.0)]
    pub pollution_noise: f64,
}

pub fn run(args: &GenerateArgs, outputs: &mut OutputSet) -> Result<()> {
    let mut spec =
        CitySpec::new(args.segments, args.weeks, args.seed).with_base_scale(args.base_scale);
    spec.weekend_factor = args.weekend_factor;
    spec.noise = args.noise;
    spec.skewness = args.skewness;

    let matrix = generate_traffic(&spec)?;

    outputs.write(&args.out, |w| {
        match args.format.as_str() {
            "fluxmatrix" => write_fluxmatrix(&matrix, &mut *w)?,
            _ => {
                writeln!(w, "timestamp,segment_id,count")?;
                for t in 0..matrix.n_times() {
                    let stamp = timefmt::format_instant(matrix.time_at(t));
                    for (s, id) in matrix.segments().iter().enumerate() {
                        writeln!(w, "{stamp},{id},{}", matrix.value(t, s) as u64)?;
                    }
                }
            }
        }
        Ok(())
    })?;

    if let Some(pollution_path) = &args.pollution {
        let segment = match &args.pollution_segment {
            Some(id) => SegmentId::new(id.clone()),
            None => matrix.segments()[0].clone(),
        };
        let hourly = rebin_to_hourly(&matrix, &segment)
            .with_context(|| format!("rebinning segment {segment}"))?;
        // derived sub-seed keeps the channel deterministic but distinct
        let pollution = generate_pollution(
            &hourly,
            args.background,
            args.coupling,
            args.pollution_noise,
            args.seed.wrapping_add(1),
        );
        outputs.write(pollution_path, |w| write_hourly_csv(&pollution, w))?;
    }

    let mut manifest = RunManifest::new("generate");
    manifest
        .seed(args.seed)
        .flag("segments", args.segments)
        .flag("weeks", args.weeks)
        .flag("base_scale", args.base_scale)
        .flag("weekend_factor", args.weekend_factor)
        .flag("noise", args.noise)
        .flag("skewness", args.skewness)
        .flag("format", &args.format);
    if let Some(p) = &args.pollution {
        manifest
            .flag("pollution", p.display())
            .flag("background", args.background)
            .flag("coupling", args.coupling)
            .flag("pollution_noise", args.pollution_noise);
    }
    manifest.write(&args.out, outputs)
}
