//! Atomic file writing, data loading, and the level-table format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};

use fluxwarn_core::alarm::AlarmLevel;
use fluxwarn_core::data::{build_matrix, parse_records, read_fluxmatrix, TrafficMatrix};
use fluxwarn_core::timefmt;
use fluxwarn_core::HourlySeries;

/// Tracks files written by one command so a failure can clean them up.
/// Every write goes to a temp file in the destination directory first and
/// is renamed into place, so readers never observe a half-written file.
#[derive(Default)]
pub struct OutputSet {
    finalized: Vec<PathBuf>,
}

impl OutputSet {
    pub fn write(
        &mut self,
        path: &Path,
        body: impl FnOnce(&mut dyn Write) -> Result<()>,
    ) -> Result<()> {
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir)
            .with_context(|| format!("creating temporary file beside {}", path.display()))?;
        {
            let mut w = BufWriter::new(&mut tmp);
            body(&mut w)?;
            w.flush()?;
        }
        tmp.persist(path)
            .with_context(|| format!("writing {}", path.display()))?;
        self.finalized.push(path.to_owned());
        Ok(())
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.finalized
    }

    /// Remove everything already written; used when a later step fails.
    pub fn discard(&mut self) {
        for p in self.finalized.drain(..) {
            let _ = std::fs::remove_file(&p);
        }
    }
}

/// Load a traffic dataset: a `fluxmatrix v1` file or a flux CSV, detected
/// from the first line. `csv_header` says whether a CSV carries a header.
pub fn load_traffic(path: &Path, csv_header: bool) -> Result<TrafficMatrix> {
    let mut file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut probe = [0u8; 14];
    let n = file.read(&mut probe)?;
    let is_matrix = &probe[..n.min(13)] == b"fluxmatrix v1";

    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let reader = BufReader::new(file);
    let matrix = if is_matrix {
        read_fluxmatrix(reader).with_context(|| format!("reading {}", path.display()))?
    } else {
        let records = parse_records(reader, csv_header)
            .with_context(|| format!("parsing {}", path.display()))?;
        build_matrix(&records).with_context(|| format!("assembling {}", path.display()))?
    };
    Ok(matrix)
}

/// Read an hourly `timestamp,value` CSV (header expected).
pub fn load_hourly(path: &Path) -> Result<HourlySeries> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut start: Option<DateTime<Utc>> = None;
    let mut values = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let (ts, value) = line.split_once(',').with_context(|| {
            format!("{}:{}: expected `timestamp,value`", path.display(), idx + 1)
        })?;
        let t = timefmt::parse_instant(ts.trim())
            .map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), idx + 1))?;
        let v: f64 = value
            .trim()
            .parse()
            .with_context(|| format!("{}:{}: bad value {value:?}", path.display(), idx + 1))?;
        match start {
            None => start = Some(t),
            Some(s) => {
                let expect = s + chrono::Duration::hours(values.len() as i64);
                if t != expect {
                    bail!(
                        "{}:{}: expected hourly timestamp {}",
                        path.display(),
                        idx + 1,
                        timefmt::format_instant(expect)
                    );
                }
            }
        }
        values.push(v);
    }
    let start = start.context("empty hourly series")?;
    Ok(HourlySeries::new(start, values))
}

pub fn write_hourly_csv(series: &HourlySeries, w: &mut dyn Write) -> Result<()> {
    writeln!(w, "timestamp,value")?;
    for (i, v) in series.values.iter().enumerate() {
        writeln!(w, "{},{v}", timefmt::format_instant(series.time_at(i)))?;
    }
    Ok(())
}

/// One row of the alarm level table.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelRow {
    pub time: DateTime<Utc>,
    pub segment: String,
    pub true_flux: f64,
    pub pred_flux: f64,
    pub true_level: AlarmLevel,
    pub pred_level: AlarmLevel,
}

pub const LEVEL_TABLE_HEADER: &str = "time,segment,true_flux,pred_flux,true_level,pred_level";

pub fn write_level_table(rows: &[LevelRow], w: &mut dyn Write) -> Result<()> {
    writeln!(w, "{LEVEL_TABLE_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            timefmt::format_instant(r.time),
            r.segment,
            r.true_flux,
            r.pred_flux,
            r.true_level,
            r.pred_level
        )?;
    }
    Ok(())
}

pub fn read_level_table(path: &Path) -> Result<Vec<LevelRow>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if idx == 0 {
            if line.trim() != LEVEL_TABLE_HEADER {
                bail!("{}: not a level table (bad header)", path.display());
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            bail!("{}:{}: expected 6 fields", path.display(), idx + 1);
        }
        let level = |s: &str| {
            AlarmLevel::parse(s)
                .with_context(|| format!("{}:{}: bad level {s:?}", path.display(), idx + 1))
        };
        rows.push(LevelRow {
            time: timefmt::parse_instant(f[0])
                .map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), idx + 1))?,
            segment: f[1].to_owned(),
            true_flux: f[2]
                .parse()
                .with_context(|| format!("{}:{}: bad flux", path.display(), idx + 1))?,
            pred_flux: f[3]
                .parse()
                .with_context(|| format!("{}:{}: bad flux", path.display(), idx + 1))?,
            true_level: level(f[4])?,
            pred_level: level(f[5])?,
        });
    }
    Ok(rows)
}
