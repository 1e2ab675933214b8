use dialogue_reward::featurize::{FeatureMeta, FeatureSequence};
use dialogue_reward::gru::predict;
use dialogue_reward::train::train_features;
use dialogue_reward::{mae, ModelConfig, TrainConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Target is the component sum of the final row.
fn linear_task(n: usize, len: usize, dim: usize, seed: u64) -> Vec<FeatureSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let vectors = Array2::from_shape_simple_fn((len, dim), || rng.random_range(-1.0..1.0));
            let target = vectors.row(len - 1).sum();
            FeatureSequence {
                vectors,
                target,
                meta: FeatureMeta {
                    source_id: i.to_string(),
                    noise_level: 0,
                },
            }
        })
        .collect()
}

fn model(dim: usize, batchnorm: bool) -> ModelConfig {
    ModelConfig {
        input_dim: dim,
        hidden_dim: 16,
        num_layers: 1,
        dropout_rate: 0.0,
        batchnorm_enabled: batchnorm,
        ..ModelConfig::default()
    }
}

fn quick(max_epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        max_epochs,
        patience,
        learning_rate: 1e-2,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn learns_a_linear_target() {
    let data = linear_task(200, 3, 4, 0);
    let (_, report) = train_features(&data, &model(4, false), &quick(50, 50), |_| {}).unwrap();
    let first = report.epochs[0].train_mae;
    let last = report.epochs.last().unwrap().train_mae;
    assert!(last < 0.25 * first, "{first} -> {last}");
}

#[test]
fn learns_a_linear_target_with_batchnorm() {
    // pilot: about 27% of the first-epoch error after 50 epochs
    let data = linear_task(200, 3, 4, 0);
    let (_, report) = train_features(&data, &model(4, true), &quick(50, 50), |_| {}).unwrap();
    let first = report.epochs[0].train_mae;
    let last = report.epochs.last().unwrap().train_mae;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn zero_patience_stops_at_first_miss() {
    let data = linear_task(60, 2, 3, 1);
    let cfg = TrainConfig {
        learning_rate: 0.5,
        ..quick(40, 0)
    };
    let (_, report) = train_features(&data, &model(3, false), &cfg, |_| {}).unwrap();
    assert!(report.stopped_early, "{:?}", report.epochs);
    let last = report.epochs.len();
    let best_before = report.epochs[..last - 1]
        .iter()
        .map(|e| e.valid_mae)
        .fold(f64::INFINITY, f64::min);
    assert!(report.epochs[last - 1].valid_mae >= best_before);
    assert!(report.epochs[..last - 1]
        .windows(2)
        .all(|w| w[1].valid_mae < w[0].valid_mae));
}

#[test]
fn training_is_reproducible() {
    let data = linear_task(80, 3, 2, 2);
    let cfg = ModelConfig {
        dropout_rate: 0.2,
        ..model(2, true)
    };
    let a = train_features(&data, &cfg, &quick(8, 3), |_| {}).unwrap();
    let b = train_features(&data, &cfg, &quick(8, 3), |_| {}).unwrap();
    assert_eq!(a, b);
}

#[test]
fn best_epoch_parameters_are_returned() {
    let data = linear_task(100, 2, 3, 4);
    let cfg = TrainConfig {
        valid_fraction: 0.25,
        learning_rate: 0.3,
        ..quick(15, 15)
    };
    let mut records = Vec::new();
    let (params, report) =
        train_features(&data, &model(3, false), &cfg, |r| records.push(r.clone())).unwrap();
    assert_eq!(records, report.epochs);
    assert!(report.epochs.len() <= cfg.max_epochs);
    let best = report.best_valid_mae();
    assert!(report.epochs.iter().all(|e| e.valid_mae >= best));

    // recompute the validation MAE of the returned parameters
    let (_, valid) = dialogue_reward::train::split(&data, cfg.valid_fraction, cfg.seed).unwrap();
    let targets: Vec<f64> = valid.iter().map(|f| f.target).collect();
    let preds = predict(&valid, &params, &model(3, false), 7).unwrap();
    assert!((mae(&preds, &targets).unwrap() - best).abs() < 1e-12);
}
