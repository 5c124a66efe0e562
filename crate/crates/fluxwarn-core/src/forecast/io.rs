//! The `fluxmodel v1` file format.
//!
//! Line-oriented text: a header, the training configuration, the segment
//! universe and normalization statistics, then each parameter block as
//! `param <name> <rows> <cols>` followed by its rows, and finally the
//! training history. Floats are written in Rust's shortest round-trip
//! decimal form, so save → load reproduces every value bit-exactly.

use std::io::{BufRead, Write};

use crate::data::{NormStats, SegmentId};

use super::{EpochStats, ForecastError, ForecastModel, LstmParams, Matrix, TrainConfig};

const PARAM_NAMES: [&str; 14] = [
    "w_i", "w_f", "w_o", "w_g", "u_i", "u_f", "u_o", "u_g", "b_i", "b_f", "b_o", "b_g", "v_out",
    "c_out",
];

fn join_floats(values: &[f64]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{v}"));
    }
    out
}

/// Write a trained model.
pub fn write_model<W: Write>(model: &ForecastModel, mut w: W) -> Result<(), ForecastError> {
    writeln!(w, "fluxmodel v1")?;
    writeln!(w, "target {}", model.target_segment)?;
    writeln!(w, "lookback {}", model.lookback)?;
    writeln!(w, "horizon {}", model.horizon)?;
    writeln!(w, "hidden {}", model.params.hidden_size())?;
    let c = &model.config;
    writeln!(
        w,
        "config lr={} epochs={} batch={} val_split={} hidden={} seed={}",
        c.learning_rate, c.epochs, c.batch_size, c.validation_split, c.hidden_size, c.seed
    )?;
    writeln!(w, "segments {}", model.segments.len())?;
    let ids: Vec<&str> = model.segments.iter().map(|s| s.as_str()).collect();
    writeln!(w, "{}", ids.join(" "))?;
    writeln!(w, "norm_mean {}", join_floats(&model.norm.per_segment_mean))?;
    writeln!(w, "norm_std {}", join_floats(&model.norm.per_segment_std))?;

    let blocks = model.params.blocks();
    for (name, block) in PARAM_NAMES.iter().zip(blocks) {
        let (rows, cols) = block_shape(&model.params, name);
        writeln!(w, "param {name} {rows} {cols}")?;
        for r in 0..rows {
            writeln!(w, "{}", join_floats(&block[r * cols..(r + 1) * cols]))?;
        }
    }

    writeln!(w, "history {}", model.history.len())?;
    for e in &model.history {
        writeln!(w, "{} {} {}", e.epoch, e.train_loss, e.val_loss)?;
    }
    writeln!(w, "end")?;
    Ok(())
}

fn block_shape(params: &LstmParams, name: &str) -> (usize, usize) {
    let (s, h, hor) = (params.input_size(), params.hidden_size(), params.horizon());
    match name {
        "w_i" | "w_f" | "w_o" | "w_g" => (h, s),
        "u_i" | "u_f" | "u_o" | "u_g" => (h, h),
        "b_i" | "b_f" | "b_o" | "b_g" => (1, h),
        "v_out" => (hor, h),
        "c_out" => (1, hor),
        _ => unreachable!("unknown parameter block {name}"),
    }
}

struct Reader<R: BufRead> {
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Reader<R> {
    fn next(&mut self) -> Result<String, ForecastError> {
        self.line_no += 1;
        match self.lines.next() {
            Some(line) => Ok(line?),
            None => Err(ForecastError::BadModelFile {
                line: self.line_no,
                reason: "unexpected end of file".to_owned(),
            }),
        }
    }

    fn bad(&self, reason: impl Into<String>) -> ForecastError {
        ForecastError::BadModelFile {
            line: self.line_no,
            reason: reason.into(),
        }
    }

    fn keyword(&mut self, key: &str) -> Result<String, ForecastError> {
        let line = self.next()?;
        match line.strip_prefix(key).map(str::trim) {
            Some(rest) if line.starts_with(key) => Ok(rest.to_owned()),
            _ => Err(self.bad(format!("expected `{key} ...`, got {line:?}"))),
        }
    }

    fn floats(&self, text: &str, expected: usize) -> Result<Vec<f64>, ForecastError> {
        let values: Result<Vec<f64>, _> = text.split_whitespace().map(str::parse::<f64>).collect();
        let values = values.map_err(|e| self.bad(format!("bad float: {e}")))?;
        if values.len() != expected {
            return Err(self.bad(format!("expected {expected} values, got {}", values.len())));
        }
        Ok(values)
    }
}

/// Read a model written by [`write_model`].
pub fn read_model<R: BufRead>(reader: R) -> Result<ForecastModel, ForecastError> {
    let mut r = Reader {
        lines: reader.lines(),
        line_no: 0,
    };

    if r.next()?.trim() != "fluxmodel v1" {
        return Err(r.bad("expected header `fluxmodel v1`"));
    }
    let target = SegmentId::new(r.keyword("target")?);
    let lookback: usize = r
        .keyword("lookback")?
        .parse()
        .map_err(|_| r.bad("bad lookback"))?;
    let horizon: usize = r
        .keyword("horizon")?
        .parse()
        .map_err(|_| r.bad("bad horizon"))?;
    let hidden: usize = r
        .keyword("hidden")?
        .parse()
        .map_err(|_| r.bad("bad hidden size"))?;

    let config_line = r.keyword("config")?;
    let mut config = TrainConfig::default();
    for token in config_line.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| r.bad(format!("bad config token {token:?}")))?;
        let parse_err = || r.bad(format!("bad config value in {token:?}"));
        match key {
            "lr" => config.learning_rate = value.parse().map_err(|_| parse_err())?,
            "epochs" => config.epochs = value.parse().map_err(|_| parse_err())?,
            "batch" => config.batch_size = value.parse().map_err(|_| parse_err())?,
            "val_split" => config.validation_split = value.parse().map_err(|_| parse_err())?,
            "hidden" => config.hidden_size = value.parse().map_err(|_| parse_err())?,
            "seed" => config.seed = value.parse().map_err(|_| parse_err())?,
            other => return Err(r.bad(format!("unknown config key {other:?}"))),
        }
    }

    let n_segments: usize = r
        .keyword("segments")?
        .parse()
        .map_err(|_| r.bad("bad segment count"))?;
    let seg_line = r.next()?;
    let segments: Vec<SegmentId> = seg_line.split_whitespace().map(SegmentId::from).collect();
    if segments.len() != n_segments {
        return Err(r.bad("segment line does not match declared count"));
    }
    if !segments.contains(&target) {
        return Err(r.bad(format!("target segment {target} missing from segment list")));
    }

    let mean_line = r.keyword("norm_mean")?;
    let per_segment_mean = r.floats(&mean_line, n_segments)?;
    let std_line = r.keyword("norm_std")?;
    let per_segment_std = r.floats(&std_line, n_segments)?;
    let norm = NormStats {
        per_segment_mean,
        per_segment_std,
    };

    let mut params = LstmParams::zeros(n_segments, hidden, horizon);
    for name in PARAM_NAMES {
        let decl = r.next()?;
        let parts: Vec<&str> = decl.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "param" || parts[1] != name {
            return Err(r.bad(format!(
                "expected `param {name} <rows> <cols>`, got {decl:?}"
            )));
        }
        let rows: usize = parts[2].parse().map_err(|_| r.bad("bad rows"))?;
        let cols: usize = parts[3].parse().map_err(|_| r.bad("bad cols"))?;
        if (rows, cols) != block_shape(&params, name) {
            return Err(r.bad(format!(
                "block {name} is {rows}x{cols}, expected {:?}",
                block_shape(&params, name)
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = r.next()?;
            data.extend(r.floats(&line, cols)?);
        }
        store_block(&mut params, name, rows, cols, data);
    }

    let n_history: usize = r
        .keyword("history")?
        .parse()
        .map_err(|_| r.bad("bad history count"))?;
    let mut history = Vec::with_capacity(n_history);
    for _ in 0..n_history {
        let line = r.next()?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(r.bad("history rows are `epoch train_loss val_loss`"));
        }
        history.push(EpochStats {
            epoch: f[0].parse().map_err(|_| r.bad("bad epoch"))?,
            train_loss: f[1].parse().map_err(|_| r.bad("bad train loss"))?,
            val_loss: f[2].parse().map_err(|_| r.bad("bad val loss"))?,
        });
    }
    if r.next()?.trim() != "end" {
        return Err(r.bad("expected trailing `end`"));
    }

    Ok(ForecastModel {
        params,
        norm,
        segments,
        target_segment: target,
        lookback,
        horizon,
        config,
        history,
    })
}

fn store_block(params: &mut LstmParams, name: &str, rows: usize, cols: usize, data: Vec<f64>) {
    let m = Matrix::from_fn(rows, cols, |r, c| data[r * cols + c]);
    match name {
        "w_i" => params.w_i = m,
        "w_f" => params.w_f = m,
        "w_o" => params.w_o = m,
        "w_g" => params.w_g = m,
        "u_i" => params.u_i = m,
        "u_f" => params.u_f = m,
        "u_o" => params.u_o = m,
        "u_g" => params.u_g = m,
        "b_i" => params.b_i = data,
        "b_f" => params.b_f = data,
        "b_o" => params.b_o = data,
        "b_g" => params.b_g = data,
        "v_out" => params.v_out = m,
        "c_out" => params.c_out = data,
        _ => unreachable!("unknown parameter block {name}"),
    }
}
