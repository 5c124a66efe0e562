//! Training loop, trained-model container, and prediction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::{invert_norm, NormStats, SegmentId, SupervisedWindowSet};

use super::{adam_step, backward, forward, loss_mse, AdamState, ForecastError, LstmParams};

/// Training hyperparameters. Defaults follow the production configuration:
/// learning rate 1e-5, 11000 epochs, batches of 32, a chronological 10%
/// validation split, and 64 hidden units.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub validation_split: f64,
    pub hidden_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            epochs: 11_000,
            batch_size: 32,
            validation_split: 0.10,
            hidden_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ForecastError> {
        let bad = |what: &str| ForecastError::DimensionMismatch(what.to_owned());
        if !(self.validation_split > 0.0 && self.validation_split < 1.0) {
            return Err(bad("validation split must lie strictly between 0 and 1"));
        }
        if self.batch_size == 0 || self.hidden_size == 0 {
            return Err(bad("batch size and hidden size must be positive"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(bad("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Losses recorded after each epoch (epoch 0 is the untrained baseline).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// A trained per-segment forecaster: LSTM parameters, the normalization
/// statistics and segment universe it was fitted against, and the training
/// history. Immutable once trained; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub params: LstmParams,
    pub norm: NormStats,
    pub segments: Vec<SegmentId>,
    pub target_segment: SegmentId,
    pub lookback: usize,
    pub horizon: usize,
    pub config: TrainConfig,
    pub history: Vec<EpochStats>,
}

impl ForecastModel {
    pub fn target_index(&self) -> usize {
        self.segments
            .iter()
            .position(|s| s == &self.target_segment)
            .expect("target segment is always a member of the model's segment list")
    }
}

fn mean_loss(
    windows: &SupervisedWindowSet,
    indices: &[usize],
    params: &LstmParams,
) -> Result<f64, ForecastError> {
    let mut total = 0.0;
    for &i in indices {
        let (pred, _) = forward(&windows.inputs[i], params)?;
        total += loss_mse(&pred, &windows.targets[i])?;
    }
    Ok(total / indices.len() as f64)
}

/// Train an LSTM on normalized supervised windows.
///
/// `windows` must be built from the matrix normalized by `norm`, whose
/// column order is `segments`. The chronologically last `validation_split`
/// fraction of windows is held out; the rest is reshuffled each epoch with
/// the seeded generator and consumed in batches whose gradients are
/// averaged. The run is deterministic: one seed, one history, one model.
pub fn train(
    windows: &SupervisedWindowSet,
    segments: &[SegmentId],
    norm: &NormStats,
    config: &TrainConfig,
) -> Result<ForecastModel, ForecastError> {
    config.validate()?;
    if windows.is_empty() {
        return Err(ForecastError::EmptyDataset);
    }
    if segments.len() != windows.n_segments || norm.n_segments() != windows.n_segments {
        return Err(ForecastError::DimensionMismatch(format!(
            "{} segments, {} norm entries, windows built over {}",
            segments.len(),
            norm.n_segments(),
            windows.n_segments
        )));
    }
    if !segments.contains(&windows.target_segment) {
        return Err(ForecastError::DimensionMismatch(format!(
            "target segment {} missing from segment list",
            windows.target_segment
        )));
    }

    let n = windows.len();
    let n_val = (n as f64 * config.validation_split).floor() as usize;
    let train_indices: Vec<usize> = (0..n - n_val).collect();
    let val_indices: Vec<usize> = (n - n_val..n).collect();

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut params = LstmParams::new_random(
        windows.n_segments,
        config.hidden_size,
        windows.horizon,
        &mut rng,
    );
    let mut opt = AdamState::new(windows.n_segments, config.hidden_size, windows.horizon);

    let record = |params: &LstmParams, epoch: usize| -> Result<EpochStats, ForecastError> {
        let train_loss = mean_loss(windows, &train_indices, params)?;
        let val_loss = if val_indices.is_empty() {
            train_loss
        } else {
            mean_loss(windows, &val_indices, params)?
        };
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(ForecastError::Diverged { epoch });
        }
        Ok(EpochStats {
            epoch,
            train_loss,
            val_loss,
        })
    };

    let mut history = vec![record(&params, 0)?];
    let mut order = train_indices.clone();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grads = params.zeros_like();
            for &i in batch {
                let (_, tape) = forward(&windows.inputs[i], &params)?;
                let g = backward(&tape, &windows.targets[i])?;
                let acc = grads.blocks_mut();
                for (k, src) in g.blocks().iter().enumerate() {
                    for (dst, s) in acc[k].iter_mut().zip(*src) {
                        *dst += s;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for block in grads.blocks_mut() {
                for g in block.iter_mut() {
                    *g *= scale;
                }
            }
            adam_step(&mut params, &grads, &mut opt, config.learning_rate);
        }
        history.push(record(&params, epoch)?);
    }

    Ok(ForecastModel {
        params,
        norm: norm.clone(),
        segments: segments.to_vec(),
        target_segment: windows.target_segment.clone(),
        lookback: windows.lookback,
        horizon: windows.horizon,
        config: config.clone(),
        history,
    })
}

/// Forecast the target segment from a raw-count `lookback × S` window.
///
/// The model applies its own normalization. With `raw_units` the result is
/// de-normalized back to vehicle counts and clamped at zero; otherwise it
/// stays in normalized units.
pub fn predict(
    model: &ForecastModel,
    recent: &[f64],
    raw_units: bool,
) -> Result<Vec<f64>, ForecastError> {
    let s = model.segments.len();
    if recent.len() != model.lookback * s {
        return Err(ForecastError::DimensionMismatch(format!(
            "window of {} values, expected {} x {}",
            recent.len(),
            model.lookback,
            s
        )));
    }
    let normalized: Vec<f64> = recent
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let col = i % s;
            (v - model.norm.per_segment_mean[col]) / model.norm.per_segment_std[col]
        })
        .collect();
    let (pred, _) = forward(&normalized, &model.params)?;
    if !raw_units {
        return Ok(pred);
    }
    let raw = invert_norm(&pred, &model.norm, model.target_index());
    Ok(raw.into_iter().map(|v| v.max(0.0)).collect())
}
