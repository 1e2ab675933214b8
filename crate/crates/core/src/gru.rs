//! Stacked GRU regressor with an optional batch-normalized state update and a
//! linear scalar head read at the final timestep.
//!
//! For one layer, with `x` the input row and `h` the previous state:
//!
//! ```text
//! r  = sigmoid(x W_r + h U_r + b_r)
//! z  = sigmoid(x W_z + h U_z + b_z)
//! c  = tanh(x W_h + (r * h) U_h + b_h)
//! h' = BN[(1 - z) * h + z * c]
//! ```
//!
//! `BN` uses mini-batch statistics in training mode and running statistics at
//! inference; it is the identity when batch normalization is disabled. All
//! tensors are batched: rows are examples.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{FeatureSequence, SequenceSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub dropout_rate: f64,
    pub batchnorm_enabled: bool,
    pub epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 100,
            hidden_dim: 256,
            num_layers: 2,
            dropout_rate: 0.2,
            batchnorm_enabled: false,
            epsilon: 1e-5,
            bn_momentum: 0.99,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.num_layers == 0 {
            return Err(Error::Config("model dimensions must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("batch-norm epsilon must be positive".into()));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::Config("batch-norm momentum must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }
}

/// Number of trainable parameters. Batch-norm scale and shift are counted only
/// when batch normalization is enabled; running statistics never are.
pub fn count_params(cfg: &ModelConfig) -> usize {
    let h = cfg.hidden_dim;
    let layers: usize = (0..cfg.num_layers)
        .map(|l| {
            let bn = if cfg.batchnorm_enabled { 2 * h } else { 0 };
            3 * (cfg.layer_input_dim(l) * h + h * h + h) + bn
        })
        .sum();
    layers + h + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    pub w_r: Array2<f64>,
    pub w_z: Array2<f64>,
    pub w_h: Array2<f64>,
    pub u_r: Array2<f64>,
    pub u_z: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_r: Array1<f64>,
    pub b_z: Array1<f64>,
    pub b_h: Array1<f64>,
    pub bn: Option<BatchNorm>,
}

impl GruLayer {
    fn zeros(input: usize, hidden: usize, batchnorm: bool) -> Self {
        GruLayer {
            w_r: Array2::zeros((input, hidden)),
            w_z: Array2::zeros((input, hidden)),
            w_h: Array2::zeros((input, hidden)),
            u_r: Array2::zeros((hidden, hidden)),
            u_z: Array2::zeros((hidden, hidden)),
            u_h: Array2::zeros((hidden, hidden)),
            b_r: Array1::zeros(hidden),
            b_z: Array1::zeros(hidden),
            b_h: Array1::zeros(hidden),
            bn: batchnorm.then(|| BatchNorm {
                gamma: Array1::ones(hidden),
                beta: Array1::zeros(hidden),
                running_mean: Array1::zeros(hidden),
                running_var: Array1::ones(hidden),
            }),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_r.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_r.ncols()
    }
}

/// Every learnable weight, plus batch-norm running statistics. Gradients and
/// optimizer moments reuse this type; their running statistics stay unused.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<GruLayer>,
    pub w_out: Array1<f64>,
    pub b_out: Array1<f64>,
}

impl ModelParams {
    /// All-zero weights (batch-norm scale 1, running variance 1).
    pub fn zeros(cfg: &ModelConfig) -> Self {
        ModelParams {
            layers: (0..cfg.num_layers)
                .map(|l| {
                    GruLayer::zeros(cfg.layer_input_dim(l), cfg.hidden_dim, cfg.batchnorm_enabled)
                })
                .collect(),
            w_out: Array1::zeros(cfg.hidden_dim),
            b_out: Array1::zeros(1),
        }
    }

    /// Same shapes as `self`, every trainable entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for s in out.trainable_slices_mut() {
            s.fill(0.0);
        }
        out
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_out.len()
    }

    /// Trainable tensors in canonical order: per layer `W_r W_z W_h U_r U_z
    /// U_h b_r b_z b_h [gamma beta]`, then the head weight and bias.
    pub fn trainable_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            for a in [&l.w_r, &l.w_z, &l.w_h, &l.u_r, &l.u_z, &l.u_h] {
                out.push(a.as_slice().expect("standard layout"));
            }
            for b in [&l.b_r, &l.b_z, &l.b_h] {
                out.push(b.as_slice().expect("standard layout"));
            }
            if let Some(bn) = &l.bn {
                out.push(bn.gamma.as_slice().expect("standard layout"));
                out.push(bn.beta.as_slice().expect("standard layout"));
            }
        }
        out.push(self.w_out.as_slice().expect("standard layout"));
        out.push(self.b_out.as_slice().expect("standard layout"));
        out
    }

    pub fn trainable_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            for a in [
                &mut l.w_r, &mut l.w_z, &mut l.w_h, &mut l.u_r, &mut l.u_z, &mut l.u_h,
            ] {
                out.push(a.as_slice_mut().expect("standard layout"));
            }
            for b in [&mut l.b_r, &mut l.b_z, &mut l.b_h] {
                out.push(b.as_slice_mut().expect("standard layout"));
            }
            if let Some(bn) = &mut l.bn {
                out.push(bn.gamma.as_slice_mut().expect("standard layout"));
                out.push(bn.beta.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.w_out.as_slice_mut().expect("standard layout"));
        out.push(self.b_out.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable_slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.trainable_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Checks shapes against a config.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.layers.len() != cfg.num_layers || self.w_out.len() != cfg.hidden_dim {
            return Err(Error::Shape("parameters do not match model config".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.input_dim() != cfg.layer_input_dim(i)
                || l.hidden_dim() != cfg.hidden_dim
                || l.bn.is_some() != cfg.batchnorm_enabled
            {
                return Err(Error::Shape(format!("layer {i} does not match model config")));
            }
        }
        Ok(())
    }

    /// Folds the per-timestep batch statistics of a training trace into the
    /// running statistics, one timestep at a time.
    pub fn update_running_stats(&mut self, trace: &ForwardTrace, momentum: f64) {
        for (layer, lt) in self.layers.iter_mut().zip(&trace.layers) {
            let Some(bn) = &mut layer.bn else { continue };
            for step in &lt.steps {
                if let Some(Norm {
                    batch: Some((mean, var)),
                    ..
                }) = &step.norm
                {
                    bn.running_mean *= momentum;
                    bn.running_mean.scaled_add(1.0 - momentum, mean);
                    bn.running_var *= momentum;
                    bn.running_var.scaled_add(1.0 - momentum, var);
                }
            }
        }
    }
}

/// Glorot-uniform weights, zero biases, identity batch norm.
pub fn init_params(cfg: &ModelConfig, rng: &mut impl Rng) -> ModelParams {
    let mut params = ModelParams::zeros(cfg);
    let fill = |a: &mut Array2<f64>, rng: &mut dyn RngCore| {
        let (fan_in, fan_out) = a.dim();
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        a.mapv_inplace(|_| dist.sample(rng));
    };
    for l in &mut params.layers {
        for a in [
            &mut l.w_r, &mut l.w_z, &mut l.w_h, &mut l.u_r, &mut l.u_z, &mut l.u_h,
        ] {
            fill(a, rng);
        }
    }
    let limit = (6.0 / (cfg.hidden_dim + 1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    params.w_out.mapv_inplace(|_| dist.sample(rng));
    params
}

/// Time-major batch: one `batch x dim` matrix per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub steps: Vec<Array2<f64>>,
}

impl SequenceBatch {
    pub fn from_features(features: &[&FeatureSequence]) -> Result<Self> {
        let first = features
            .first()
            .ok_or_else(|| Error::Shape("empty batch".into()))?;
        let (len, dim) = first.vectors.dim();
        let mut steps = vec![Array2::zeros((features.len(), dim)); len];
        for (b, f) in features.iter().enumerate() {
            if f.vectors.dim() != (len, dim) {
                return Err(Error::Shape(format!(
                    "sequence {b} is {:?}, expected ({len}, {dim})",
                    f.vectors.dim()
                )));
            }
            for (t, step) in steps.iter_mut().enumerate() {
                step.row_mut(b).assign(&f.vectors.row(t));
            }
        }
        Ok(SequenceBatch { steps })
    }

    pub fn batch_size(&self) -> usize {
        self.steps.first().map_or(0, Array2::nrows)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

pub enum Mode<'a> {
    Infer,
    /// Mini-batch normalization statistics and dropout drawn from `rng`.
    Train { rng: &'a mut dyn RngCore },
}

impl Mode<'_> {
    fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

#[derive(Debug, Clone)]
struct Norm {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
    /// Mini-batch mean and variance, present in training mode.
    batch: Option<(Array1<f64>, Array1<f64>)>,
}

/// Cached activations of one cell evaluation.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub x: Array2<f64>,
    pub h_prev: Array2<f64>,
    pub r: Array2<f64>,
    pub z: Array2<f64>,
    pub candidate: Array2<f64>,
    /// State before normalization.
    pub pre_norm: Array2<f64>,
    norm: Option<Norm>,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub input_mask: Option<Array2<f64>>,
    pub steps: Vec<StepCache>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    /// Top-layer state at the final timestep.
    pub final_hidden: Array2<f64>,
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// One cell step for a batch of rows. `train` selects mini-batch statistics
/// for the normalization.
pub fn cell_forward(
    layer: &GruLayer,
    cfg: &ModelConfig,
    x: ArrayView2<'_, f64>,
    h_prev: ArrayView2<'_, f64>,
    train: bool,
) -> Result<(Array2<f64>, StepCache)> {
    let (batch, hidden) = (x.nrows(), layer.hidden_dim());
    if x.ncols() != layer.input_dim() || h_prev.dim() != (batch, hidden) {
        return Err(Error::Shape(format!(
            "cell expects input ({batch}, {}) and state ({batch}, {hidden}), got {:?} and {:?}",
            layer.input_dim(),
            x.dim(),
            h_prev.dim()
        )));
    }

    let r = (x.dot(&layer.w_r) + h_prev.dot(&layer.u_r) + &layer.b_r).mapv_into(sigmoid);
    let z = (x.dot(&layer.w_z) + h_prev.dot(&layer.u_z) + &layer.b_z).mapv_into(sigmoid);
    let candidate =
        (x.dot(&layer.w_h) + (&r * &h_prev).dot(&layer.u_h) + &layer.b_h).mapv_into(f64::tanh);
    let mut pre_norm = Array2::zeros((batch, hidden));
    Zip::from(&mut pre_norm)
        .and(&z)
        .and(&h_prev)
        .and(&candidate)
        .for_each(|u, &z, &h, &c| *u = (1.0 - z) * h + z * c);

    let (h, norm) = match (&layer.bn, cfg.batchnorm_enabled) {
        (Some(bn), true) => {
            let (mean, var, stats) = if train {
                let mean = pre_norm.mean_axis(Axis(0)).expect("non-empty batch");
                let var = (&pre_norm - &mean).mapv(|d| d * d).mean_axis(Axis(0)).unwrap();
                (mean.clone(), var.clone(), Some((mean, var)))
            } else {
                (bn.running_mean.clone(), bn.running_var.clone(), None)
            };
            let inv_std = var.mapv(|v| 1.0 / (v + cfg.epsilon).sqrt());
            let x_hat = (&pre_norm - &mean) * &inv_std;
            let h = &x_hat * &bn.gamma + &bn.beta;
            (
                h,
                Some(Norm {
                    x_hat,
                    inv_std,
                    batch: stats,
                }),
            )
        }
        (None, false) => (pre_norm.clone(), None),
        _ => return Err(Error::Shape("batch-norm parameters disagree with config".into())),
    };

    Ok((
        h,
        StepCache {
            x: x.to_owned(),
            h_prev: h_prev.to_owned(),
            r,
            z,
            candidate,
            pre_norm,
            norm,
        },
    ))
}

/// Runs the full stack and returns one prediction per row, read from the
/// final timestep.
pub fn forward(
    batch: &SequenceBatch,
    params: &ModelParams,
    cfg: &ModelConfig,
    mut mode: Mode<'_>,
) -> Result<(Array1<f64>, ForwardTrace)> {
    params.check(cfg)?;
    if batch.is_empty() || batch.batch_size() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if batch.steps.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("input features".into()));
    }
    let rows = batch.batch_size();
    let train = mode.is_train();
    let mut inputs: Vec<Array2<f64>> = batch.steps.clone();
    let mut layers = Vec::with_capacity(params.layers.len());

    for layer in &params.layers {
        let input_mask = match &mut mode {
            Mode::Train { rng } if cfg.dropout_rate > 0.0 => {
                Some(dropout_mask(rows, layer.input_dim(), cfg.dropout_rate, &mut **rng))
            }
            _ => None,
        };
        let mut h = Array2::zeros((rows, layer.hidden_dim()));
        let mut steps = Vec::with_capacity(inputs.len());
        let mut outputs = Vec::with_capacity(inputs.len());
        for x in &inputs {
            let x = match &input_mask {
                Some(m) => x * m,
                None => x.clone(),
            };
            let (h_next, cache) = cell_forward(layer, cfg, x.view(), h.view(), train)?;
            steps.push(cache);
            outputs.push(h_next.clone());
            h = h_next;
        }
        layers.push(LayerTrace { input_mask, steps });
        inputs = outputs;
    }

    let final_hidden = inputs.pop().expect("non-empty sequence");
    let preds = final_hidden.dot(&params.w_out) + params.b_out[0];
    Ok((
        preds,
        ForwardTrace {
            layers,
            final_hidden,
        },
    ))
}

/// Inverted dropout: kept entries are scaled by `1 / (1 - rate)`. One mask
/// per sequence, shared by all timesteps.
fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut dyn RngCore) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

/// Head output at every timestep (inference mode). Row `t` holds the
/// predictions after consuming the first `t + 1` inputs.
pub fn predict_per_step(
    batch: &SequenceBatch,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<Array2<f64>> {
    let (_, trace) = forward(batch, params, cfg, Mode::Infer)?;
    let top = trace.layers.last().expect("at least one layer");
    let layer = params.layers.last().expect("at least one layer");
    let mut out = Array2::zeros((batch.len(), batch.batch_size()));
    for (t, step) in top.steps.iter().enumerate() {
        let h = match (&step.norm, &layer.bn) {
            (Some(norm), Some(bn)) => &norm.x_hat * &bn.gamma + &bn.beta,
            _ => step.pre_norm.clone(),
        };
        out.row_mut(t).assign(&(h.dot(&params.w_out) + params.b_out[0]));
    }
    Ok(out)
}

/// Inference-mode predictions for every sequence of `source`, evaluated in
/// chunks of `batch_size`.
pub fn predict<S: SequenceSource + ?Sized>(
    source: &S,
    params: &ModelParams,
    cfg: &ModelConfig,
    batch_size: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(source.len());
    let step = batch_size.max(1);
    let mut start = 0;
    while start < source.len() {
        let end = (start + step).min(source.len());
        let owned: Vec<_> = (start..end).map(|i| source.get(i)).collect();
        let refs: Vec<&FeatureSequence> = owned.iter().map(|c| c.as_ref()).collect();
        let batch = SequenceBatch::from_features(&refs)?;
        let (preds, _) = forward(&batch, params, cfg, Mode::Infer)?;
        out.extend(preds.iter().copied());
        start = end;
    }
    Ok(out)
}

/// Reverse-mode gradients of `sum_i d_pred[i] * prediction[i]` with respect to
/// every trainable parameter.
pub fn backward(
    trace: &ForwardTrace,
    params: &ModelParams,
    d_pred: ArrayView1<'_, f64>,
) -> Result<ModelParams> {
    let rows = trace.final_hidden.nrows();
    if trace.layers.len() != params.layers.len()
        || d_pred.len() != rows
        || trace.final_hidden.ncols() != params.hidden_dim()
    {
        return Err(Error::Shape("trace does not match parameters".into()));
    }
    let mut grads = params.zeros_like();

    grads.w_out = trace.final_hidden.t().dot(&d_pred);
    grads.b_out[0] = d_pred.sum();

    let steps = trace.layers[0].steps.len();
    // gradient w.r.t. each output state of the layer currently processed
    let mut d_out: Vec<Array2<f64>> = vec![Array2::zeros((rows, params.hidden_dim())); steps];
    let d_col = d_pred.insert_axis(Axis(1));
    d_out[steps - 1] = &d_col * &params.w_out;

    for (li, (layer, lt)) in params.layers.iter().zip(&trace.layers).enumerate().rev() {
        if lt.steps.len() != steps {
            return Err(Error::Shape("trace does not match parameters".into()));
        }
        let g = &mut grads.layers[li];
        let mut d_inputs = Vec::with_capacity(if li > 0 { steps } else { 0 });
        let mut dh_next = Array2::<f64>::zeros((rows, layer.hidden_dim()));

        for (t, step) in lt.steps.iter().enumerate().rev() {
            if step.x.ncols() != layer.input_dim() || step.h_prev.ncols() != layer.hidden_dim() {
                return Err(Error::Shape("trace does not match parameters".into()));
            }
            let dh = &d_out[t] + &dh_next;
            let du = match (&step.norm, &layer.bn, &mut g.bn) {
                (Some(norm), Some(bn), Some(gbn)) => {
                    gbn.gamma += &(&dh * &norm.x_hat).sum_axis(Axis(0));
                    gbn.beta += &dh.sum_axis(Axis(0));
                    let dx_hat = &dh * &bn.gamma;
                    if norm.batch.is_some() {
                        let n = rows as f64;
                        let mean_dx = dx_hat.sum_axis(Axis(0)) / n;
                        let mean_dx_xhat = (&dx_hat * &norm.x_hat).sum_axis(Axis(0)) / n;
                        (dx_hat - &mean_dx - &(&norm.x_hat * &mean_dx_xhat)) * &norm.inv_std
                    } else {
                        dx_hat * &norm.inv_std
                    }
                }
                (None, None, None) => dh,
                _ => return Err(Error::Shape("trace does not match parameters".into())),
            };

            let mut dh_prev = Zip::from(&du).and(&step.z).map_collect(|&du, &z| du * (1.0 - z));
            let mut dz = Array2::zeros((rows, layer.hidden_dim()));
            let mut da_c = Array2::zeros((rows, layer.hidden_dim()));
            Zip::from(&mut dz)
                .and(&mut da_c)
                .and(&du)
                .and(&step.z)
                .and(&step.h_prev)
                .and(&step.candidate)
                .for_each(|dz, dac, &du, &z, &h, &c| {
                    *dz = du * (c - h) * z * (1.0 - z);
                    *dac = du * z * (1.0 - c * c);
                });
            let da_z = dz;

            let rh = &step.r * &step.h_prev;
            g.w_h += &step.x.t().dot(&da_c);
            g.u_h += &rh.t().dot(&da_c);
            g.b_h += &da_c.sum_axis(Axis(0));
            let d_rh = da_c.dot(&layer.u_h.t());
            let da_r = &d_rh * &step.h_prev * &step.r * &step.r.mapv(|r| 1.0 - r);
            dh_prev += &(&d_rh * &step.r);

            g.w_z += &step.x.t().dot(&da_z);
            g.u_z += &step.h_prev.t().dot(&da_z);
            g.b_z += &da_z.sum_axis(Axis(0));
            g.w_r += &step.x.t().dot(&da_r);
            g.u_r += &step.h_prev.t().dot(&da_r);
            g.b_r += &da_r.sum_axis(Axis(0));

            dh_prev += &da_z.dot(&layer.u_z.t());
            dh_prev += &da_r.dot(&layer.u_r.t());

            if li > 0 {
                let mut dx = da_r.dot(&layer.w_r.t());
                dx += &da_z.dot(&layer.w_z.t());
                dx += &da_c.dot(&layer.w_h.t());
                if let Some(mask) = &lt.input_mask {
                    dx *= mask;
                }
                d_inputs.push(dx);
            }
            dh_next = dh_prev;
        }

        if li > 0 {
            d_inputs.reverse();
            d_out = d_inputs;
        }
    }
    Ok(grads)
}
