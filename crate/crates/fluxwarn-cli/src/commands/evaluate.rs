//! `fluxwarn evaluate`: score a level table into a confusion matrix.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde_json::json;

use fluxwarn_core::alarm::{evaluate, AlarmLevel, ConfusionMatrix3};

use crate::ioutil::OutputSet;
use crate::manifest::RunManifest;

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Level table from `fluxwarn alarm`
    #[arg(long)]
    pub levels: PathBuf,
    /// Confusion-matrix JSON output
    #[arg(long)]
    pub out: PathBuf,
}

pub fn confusion_json(cm: &ConfusionMatrix3) -> serde_json::Value {
    let recall = |l: AlarmLevel| cm.recall(l);
    json!({
        "levels": ["Low", "Medium", "High"],
        "counts": cm.counts(),
        "recalls": {
            "low": recall(AlarmLevel::Low),
            "medium": recall(AlarmLevel::Medium),
            "high": recall(AlarmLevel::High),
        },
        "total": cm.total(),
    })
}

pub fn run(args: &EvaluateArgs, outputs: &mut OutputSet) -> Result<()> {
    let rows = crate::ioutil::read_level_table(&args.levels)?;
    let truth: Vec<AlarmLevel> = rows.iter().map(|r| r.true_level).collect();
    let pred: Vec<AlarmLevel> = rows.iter().map(|r| r.pred_level).collect();
    let cm = evaluate(&truth, &pred)?;

    outputs.write(&args.out, |w| {
        serde_json::to_writer_pretty(&mut *w, &confusion_json(&cm))?;
        writeln!(w)?;
        Ok(())
    })?;

    let mut manifest = RunManifest::new("evaluate");
    manifest.input(&args.levels).flag("rows", rows.len());
    manifest.write(&args.out, outputs)
}
