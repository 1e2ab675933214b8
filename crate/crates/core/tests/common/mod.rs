#![allow(dead_code)]

use dialogue_reward::gru::{backward, forward, init_params, Mode, SequenceBatch};
use dialogue_reward::{ModelConfig, ModelParams};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one finite-difference comparison.
pub struct GradCheck {
    pub config: ModelConfig,
    pub seq_len: usize,
    pub batch: usize,
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Denominator floor so that entries whose true gradient is zero compare
/// on an absolute scale.
const REL_FLOOR: f64 = 1e-6;
const STEP: f64 = 1e-4;

fn objective(
    batch: &SequenceBatch,
    params: &ModelParams,
    cfg: &ModelConfig,
    weights: &Array1<f64>,
    mask_seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let (preds, _) = forward(batch, params, cfg, Mode::Train { rng: &mut rng }).unwrap();
    preds.dot(weights)
}

/// Random tiny network (dims at most 4, at most 3 timesteps) checked against
/// central differences on every trainable entry.
pub fn check_gradients(seed: u64, batchnorm: bool) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        input_dim: rng.random_range(1..=4),
        hidden_dim: rng.random_range(1..=4),
        num_layers: rng.random_range(1..=2),
        dropout_rate: if rng.random_bool(0.5) { 0.25 } else { 0.0 },
        batchnorm_enabled: batchnorm,
        ..ModelConfig::default()
    };
    let seq_len = rng.random_range(1..=3);
    let rows = rng.random_range(2..=4);
    let mut params = init_params(&cfg, &mut rng);
    // move biases and batch-norm affine terms off their trivial init
    for layer in &mut params.layers {
        for b in [&mut layer.b_r, &mut layer.b_z, &mut layer.b_h] {
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        if let Some(bn) = &mut layer.bn {
            bn.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
            bn.beta.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
    }
    params.b_out[0] = rng.random_range(-0.5..0.5);
    let steps = (0..seq_len)
        .map(|_| Array2::from_shape_simple_fn((rows, cfg.input_dim), || rng.random_range(-1.0..1.0)))
        .collect();
    let batch = SequenceBatch { steps };
    let weights = Array1::from_shape_simple_fn(rows, || rng.random_range(-1.0..1.0));
    let mask_seed = rng.random();

    let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let (_, trace) = forward(&batch, &params, &cfg, Mode::Train { rng: &mut mask_rng }).unwrap();
    let grads = backward(&trace, &params, weights.view()).unwrap();
    let analytic: Vec<f64> = grads.trainable_slices().concat();

    let mut max_rel_error = 0.0f64;
    let mut probe = params.clone();
    for (k, &a) in analytic.iter().enumerate() {
        let original = entry(&mut probe, k);
        set_entry(&mut probe, k, original + STEP);
        let up = objective(&batch, &probe, &cfg, &weights, mask_seed);
        set_entry(&mut probe, k, original - STEP);
        let down = objective(&batch, &probe, &cfg, &weights, mask_seed);
        set_entry(&mut probe, k, original);
        let numeric = (up - down) / (2.0 * STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        max_rel_error = max_rel_error.max(rel);
    }
    GradCheck {
        config: cfg,
        seq_len,
        batch: rows,
        max_rel_error,
        checked: analytic.len(),
    }
}

fn locate(params: &mut ModelParams, mut k: usize) -> &mut f64 {
    for slice in params.trainable_slices_mut() {
        if k < slice.len() {
            return &mut slice[k];
        }
        k -= slice.len();
    }
    panic!("parameter index out of range");
}

fn entry(params: &mut ModelParams, k: usize) -> f64 {
    *locate(params, k)
}

fn set_entry(params: &mut ModelParams, k: usize, value: f64) {
    *locate(params, k) = value;
}
