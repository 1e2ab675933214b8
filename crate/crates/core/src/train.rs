//! Mini-batch MAE training with Adam and early stopping.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{
    EmbeddingTable, FeatureSequence, LazyFeatures, SequenceSource, Subset, Window,
};
use crate::gru::{self, init_params, Mode, ModelConfig, ModelParams, SequenceBatch};
use crate::noise::{substream, ScoredDialogue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub valid_fraction: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            max_epochs: 100,
            patience: 10,
            valid_fraction: 0.2,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction {} outside (0, 1)",
                self.valid_fraction
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch size and epoch count must be at least 1".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config("patience exceeds max epochs".into()));
        }
        if !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || !(self.adam_epsilon > 0.0)
        {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }
}

/// Shuffled split into `ceil((1 - f) * n)` training indices and the rest.
pub fn split_indices(n: usize, valid_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Config(format!("cannot split {n} examples")));
    }
    // tolerance absorbs representation error in (1 - f) * n
    let train_len = (((1.0 - valid_fraction) * n as f64) - 1e-9).ceil() as usize;
    if train_len == 0 || train_len >= n {
        return Err(Error::Config(format!(
            "split of {n} examples at fraction {valid_fraction} leaves an empty side"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, "split", 0));
    let valid = idx.split_off(train_len);
    Ok((idx, valid))
}

pub fn split<T: Clone>(items: &[T], valid_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (train, valid) = split_indices(items.len(), valid_fraction, seed)?;
    Ok((
        train.into_iter().map(|i| items[i].clone()).collect(),
        valid.into_iter().map(|i| items[i].clone()).collect(),
    ))
}

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Shape("mean absolute error of nothing".into()));
    }
    let total: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros = params.zeros_like();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    let g = grads.trainable_slices();
    let shapes = |p: &ModelParams| p.trainable_slices().iter().map(|s| s.len()).collect::<Vec<_>>();
    let expected = shapes(params);
    if shapes(grads) != expected || shapes(&state.m) != expected || shapes(&state.v) != expected {
        return Err(Error::Shape("gradient does not match parameters".into()));
    }
    if g.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("gradient".into()));
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let correct1 = 1.0 - b1.powi(t);
    let correct2 = 1.0 - b2.powi(t);
    let mut p = params.trainable_slices_mut();
    let mut m = state.m.trainable_slices_mut();
    let mut v = state.v.trainable_slices_mut();
    for (((p, m), v), g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(&g) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / correct1;
            let v_hat = v[i] / correct2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_mae: f64,
    pub valid_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn best_valid_mae(&self) -> f64 {
        self.epochs[self.best_epoch - 1].valid_mae
    }

    /// One JSON object per epoch, newline-terminated.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Featurizes `dataset` at history length `history` and trains on it.
pub fn train(
    dataset: &[ScoredDialogue],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    table: &EmbeddingTable,
    history: usize,
    window: Window,
) -> Result<(ModelParams, TrainReport)> {
    if history == 0 {
        return Err(Error::Config("history length must be at least 1".into()));
    }
    if table.dim() != model_cfg.input_dim {
        return Err(Error::Config(format!(
            "embedding dim {} differs from model input dim {}",
            table.dim(),
            model_cfg.input_dim
        )));
    }
    let source = LazyFeatures {
        dialogues: dataset,
        table,
        history,
        window,
    };
    train_features(&source, model_cfg, train_cfg, |_| {})
}

fn batches(order: &[usize], batch_size: usize, merge_singleton: bool) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if merge_singleton && out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * batch_size;
        *out.last_mut().expect("at least one batch") = &order[start..];
    }
    out
}

/// Trains on any sequence source; `on_epoch` sees each epoch record as it is
/// produced. Returns the parameters of the best validation epoch.
pub fn train_features<S: SequenceSource + ?Sized>(
    features: &S,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams, TrainReport)> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if !features.is_empty() && features.dim() != model_cfg.input_dim {
        return Err(Error::Shape(format!(
            "feature dim {} differs from model input dim {}",
            features.dim(),
            model_cfg.input_dim
        )));
    }

    let (train_idx, valid_idx) = split_indices(features.len(), train_cfg.valid_fraction, train_cfg.seed)?;
    let valid = Subset {
        source: features,
        indices: &valid_idx,
    };
    let valid_targets: Vec<f64> = valid_idx.iter().map(|&i| features.target(i)).collect();

    let mut params = init_params(model_cfg, &mut substream(train_cfg.seed, "init", 0));
    let mut adam = AdamState::new(&params);
    let mut rng = substream(train_cfg.seed, "epochs", 0);

    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_mae = f64::INFINITY;
    let mut since_best = 0usize;
    let mut stopped_early = false;
    let mut epochs = Vec::new();
    let mut order = train_idx.clone();

    for epoch in 1..=train_cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut abs_total = 0.0;
        for (bi, batch_idx) in batches(&order, train_cfg.batch_size, model_cfg.batchnorm_enabled)
            .into_iter()
            .enumerate()
        {
            let owned: Vec<_> = batch_idx.iter().map(|&i| features.get(i)).collect();
            let refs: Vec<&FeatureSequence> = owned.iter().map(|c| c.as_ref()).collect();
            let batch = SequenceBatch::from_features(&refs)?;
            let (preds, trace) =
                gru::forward(&batch, &params, model_cfg, Mode::Train { rng: &mut rng })?;
            let n = refs.len() as f64;
            let mut loss = 0.0;
            let d_pred = ndarray::Array1::from_iter(preds.iter().zip(&refs).map(|(p, f)| {
                let diff = p - f.target;
                loss += diff.abs();
                if diff > 0.0 {
                    1.0 / n
                } else if diff < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                }
            }));
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch}, batch {bi}"
                )));
            }
            abs_total += loss;
            let grads = gru::backward(&trace, &params, d_pred.view())?;
            adam_step(&mut params, &grads, &mut adam, train_cfg)?;
            if model_cfg.batchnorm_enabled {
                params.update_running_stats(&trace, model_cfg.bn_momentum);
            }
        }

        let valid_preds = gru::predict(&valid, &params, model_cfg, train_cfg.batch_size)?;
        let valid_mae = mae(&valid_preds, &valid_targets)?;
        if !valid_mae.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            train_mae: abs_total / order.len() as f64,
            valid_mae,
        };
        on_epoch(&record);
        epochs.push(record);

        if valid_mae < best_mae {
            best_mae = valid_mae;
            best_epoch = epoch;
            best = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train_cfg.patience.max(1) && epoch < train_cfg.max_epochs {
                stopped_early = true;
                break;
            }
        }
    }

    Ok((
        best,
        TrainReport {
            epochs,
            best_epoch,
            stopped_early,
        },
    ))
}
