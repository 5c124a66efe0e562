//! `fluxwarn train`: fit one LSTM per target segment and write model files
//! plus training-history CSVs.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::Args;

use fluxwarn_core::data::{apply_norm, fit_norm, impute, make_windows};
use fluxwarn_core::forecast::{train, write_model, ForecastModel, TrainConfig};
use fluxwarn_core::{SegmentId, TrafficMatrix};

use crate::ioutil::OutputSet;
use crate::manifest::RunManifest;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Traffic data (flux CSV or fluxmatrix file)
    #[arg(long)]
    pub data: PathBuf,
    /// Target segment id; comma-separate several to train one model each
    #[arg(long)]
    pub target: String,
    /// Model file (single target) or directory (multiple targets)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub lookback: usize,
    #[arg(long, default_value_t = 3)]
    pub horizon: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 11_000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.10)]
    pub val_split: f64,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV input has no header line
    #[arg(long)]
    pub no_header: bool,
    /// Train only on bins at or after this instant
    #[arg(long)]
    pub start: Option<String>,
    /// Train only on bins strictly before this instant
    #[arg(long)]
    pub end: Option<String>,
    /// Worker threads for multiple targets (capped by FLUXWARN_THREADS)
    #[arg(long, default_value_t = 1)]
    pub parallel_targets: usize,
}

fn restrict_span(
    matrix: &TrafficMatrix,
    start: &Option<String>,
    end: &Option<String>,
) -> Result<TrafficMatrix> {
    let parse =
        |text: &String| fluxwarn_core::timefmt::parse_instant(text).map_err(|e| anyhow::anyhow!(e));
    let from = match start {
        Some(t) => matrix
            .bin_at_or_after(parse(t)?)
            .with_context(|| format!("--start {t} is past the end of the data"))?,
        None => 0,
    };
    // end is exclusive: the first bin at-or-after it is the cut point
    let to = match end {
        Some(t) => matrix
            .bin_at_or_after(parse(t)?)
            .unwrap_or(matrix.n_times()),
        None => matrix.n_times(),
    };
    if from >= to {
        bail!("empty training span");
    }
    Ok(matrix.slice_rows(from, to))
}

fn thread_cap() -> usize {
    std::env::var("FLUXWARN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(usize::MAX)
}

pub fn history_path(model_path: &Path) -> PathBuf {
    let mut name = model_path.as_os_str().to_owned();
    name.push(".history.csv");
    PathBuf::from(name)
}

fn write_history(model: &ForecastModel, w: &mut dyn std::io::Write) -> Result<()> {
    writeln!(w, "epoch,train_loss,val_loss")?;
    for e in &model.history {
        writeln!(w, "{},{},{}", e.epoch, e.train_loss, e.val_loss)?;
    }
    Ok(())
}

pub fn run(args: &TrainArgs, outputs: &mut OutputSet) -> Result<()> {
    let targets: Vec<SegmentId> = args
        .target
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(SegmentId::from)
        .collect();
    if targets.is_empty() {
        bail!("--target names no segments");
    }

    let matrix = crate::ioutil::load_traffic(&args.data, !args.no_header)?;
    for t in &targets {
        if matrix.segment_index(t).is_none() {
            bail!("segment {t} not present in {}", args.data.display());
        }
    }
    let matrix = restrict_span(&matrix, &args.start, &args.end)?;

    let config = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch,
        validation_split: args.val_split,
        hidden_size: args.hidden,
        seed: args.seed,
    };

    let filled = impute(&matrix)?;
    let norm = fit_norm(&filled)?;
    let normalized = apply_norm(&filled, &norm);

    let model_path = |target: &SegmentId| -> PathBuf {
        if targets.len() == 1 {
            args.out.clone()
        } else {
            args.out.join(format!("{target}.fluxmodel"))
        }
    };
    if targets.len() > 1 {
        std::fs::create_dir_all(&args.out)
            .with_context(|| format!("creating {}", args.out.display()))?;
    }

    let models = train_all(&targets, &normalized, &norm, &config, args)?;
    for (target, model) in targets.iter().zip(&models) {
        let path = model_path(target);
        outputs.write(&path, |w| Ok(write_model(model, &mut *w)?))?;
        outputs.write(&history_path(&path), |w| write_history(model, w))?;
    }

    let mut manifest = RunManifest::new("train");
    manifest
        .seed(args.seed)
        .input(&args.data)
        .flag("target", &args.target)
        .flag("lookback", args.lookback)
        .flag("horizon", args.horizon)
        .flag("lr", args.lr)
        .flag("epochs", args.epochs)
        .flag("batch", args.batch)
        .flag("val_split", args.val_split)
        .flag("hidden", args.hidden)
        .flag("parallel_targets", args.parallel_targets);
    if let Some(s) = &args.start {
        manifest.flag("start", s);
    }
    if let Some(e) = &args.end {
        manifest.flag("end", e);
    }
    manifest.write(&model_path(&targets[0]), outputs)
}

fn train_all(
    targets: &[SegmentId],
    normalized: &TrafficMatrix,
    norm: &fluxwarn_core::NormStats,
    config: &TrainConfig,
    args: &TrainArgs,
) -> Result<Vec<ForecastModel>> {
    let workers = args
        .parallel_targets
        .min(thread_cap())
        .min(targets.len())
        .max(1);
    if workers == 1 {
        return targets
            .iter()
            .map(|t| train_one(t, normalized, norm, config, args))
            .collect();
    }

    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<ForecastModel>>>> =
        targets.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= targets.len() {
                    break;
                }
                let outcome = train_one(&targets[i], normalized, norm, config, args);
                *results[i].lock().expect("result slot poisoned") = Some(outcome);
            });
        }
    });
    results
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("result slot poisoned")
                .expect("worker filled every slot")
        })
        .collect()
}

fn train_one(
    target: &SegmentId,
    normalized: &TrafficMatrix,
    norm: &fluxwarn_core::NormStats,
    config: &TrainConfig,
    args: &TrainArgs,
) -> Result<ForecastModel> {
    let windows = make_windows(normalized, target, args.lookback, args.horizon)?;
    let model = train(&windows, normalized.segments(), norm, config)
        .with_context(|| format!("training segment {target}"))?;
    Ok(model)
}
