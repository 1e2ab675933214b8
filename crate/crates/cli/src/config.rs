//! Flag, config-file and default resolution for model and training settings.

use std::path::Path;

use clap::Args;
use dialogue_reward::{ModelConfig, TrainConfig};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Embedding components kept per word (model input size).
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Batch normalization after every recurrent layer.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub batchnorm: Option<bool>,
    #[arg(long)]
    pub bn_epsilon: Option<f64>,
    #[arg(long)]
    pub bn_momentum: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub valid_fraction: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_epsilon: Option<f64>,
}

fn set<T: Serialize>(obj: &mut Map<String, Value>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        obj.insert(key.to_string(), serde_json::to_value(v).expect("plain value"));
    }
}

impl ModelArgs {
    fn overrides(&self) -> Map<String, Value> {
        let mut m = Map::new();
        set(&mut m, "input_dim", self.dim);
        set(&mut m, "hidden_dim", self.hidden);
        set(&mut m, "num_layers", self.layers);
        set(&mut m, "dropout_rate", self.dropout);
        set(&mut m, "batchnorm_enabled", self.batchnorm);
        set(&mut m, "epsilon", self.bn_epsilon);
        set(&mut m, "bn_momentum", self.bn_momentum);
        m
    }
}

impl TrainArgs {
    fn overrides(&self, seed: Option<u64>) -> Map<String, Value> {
        let mut m = Map::new();
        set(&mut m, "batch_size", self.batch_size);
        set(&mut m, "max_epochs", self.max_epochs);
        set(&mut m, "patience", self.patience);
        set(&mut m, "valid_fraction", self.valid_fraction);
        set(&mut m, "learning_rate", self.learning_rate);
        set(&mut m, "adam_beta1", self.adam_beta1);
        set(&mut m, "adam_beta2", self.adam_beta2);
        set(&mut m, "adam_epsilon", self.adam_epsilon);
        set(&mut m, "seed", seed);
        m
    }
}

/// Optional JSON config file with `model` and `train` sections.
#[derive(Debug, Default)]
pub struct ConfigFile {
    model: Map<String, Value>,
    train: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let Value::Object(mut top) = value else {
            return Err(CliError::Data(format!("{}: expected a JSON object", path.display())));
        };
        let mut section = |name: &str| match top.remove(name) {
            None => Ok(Map::new()),
            Some(Value::Object(m)) => Ok(m),
            Some(_) => Err(CliError::Data(format!(
                "{}: section {name:?} must be an object",
                path.display()
            ))),
        };
        let file = ConfigFile {
            model: section("model")?,
            train: section("train")?,
        };
        if let Some(key) = top.keys().next() {
            return Err(CliError::Data(format!("{}: unknown section {key:?}", path.display())));
        }
        Ok(file)
    }

    pub fn model(&self, flags: &ModelArgs) -> Result<ModelConfig, CliError> {
        let cfg: ModelConfig = layer(ModelConfig::default(), &self.model, &flags.overrides())?;
        cfg.validate().map_err(CliError::from)?;
        Ok(cfg)
    }

    pub fn train(&self, flags: &TrainArgs, seed: Option<u64>) -> Result<TrainConfig, CliError> {
        let overrides = flags.overrides(seed);
        let mut cfg: TrainConfig = layer(TrainConfig::default(), &self.train, &overrides)?;
        // the default patience follows a shortened epoch budget
        if !self.train.contains_key("patience") && !overrides.contains_key("patience") {
            cfg.patience = cfg.patience.min(cfg.max_epochs);
        }
        cfg.validate().map_err(CliError::from)?;
        Ok(cfg)
    }
}

/// Defaults, then the file section, then flags.
fn layer<T: Serialize + DeserializeOwned>(
    defaults: T,
    file: &Map<String, Value>,
    flags: &Map<String, Value>,
) -> Result<T, CliError> {
    let Value::Object(mut merged) = serde_json::to_value(defaults).expect("config serializes")
    else {
        unreachable!("configs serialize to objects");
    };
    for (k, v) in file.iter().chain(flags) {
        if !merged.contains_key(k) {
            return Err(CliError::Usage(format!("unknown config key {k:?}")));
        }
        merged.insert(k.clone(), v.clone());
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let mut file = ConfigFile::default();
        file.model.insert("hidden_dim".into(), 64.into());
        file.model.insert("num_layers".into(), 3.into());
        file.train.insert("patience".into(), 4.into());
        let flags = ModelArgs {
            hidden: Some(8),
            ..ModelArgs::default()
        };
        let m = file.model(&flags).unwrap();
        assert_eq!((m.hidden_dim, m.num_layers, m.input_dim), (8, 3, 100));
        let t = file.train(&TrainArgs::default(), Some(9)).unwrap();
        assert_eq!((t.patience, t.seed, t.batch_size), (4, 9, 128));
    }

    #[test]
    fn default_patience_follows_epoch_budget() {
        let file = ConfigFile::default();
        let short = TrainArgs {
            max_epochs: Some(4),
            ..TrainArgs::default()
        };
        assert_eq!(file.train(&short, None).unwrap().patience, 4);
        let explicit = TrainArgs {
            patience: Some(6),
            ..short
        };
        assert!(file.train(&explicit, None).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut file = ConfigFile::default();
        file.train.insert("momentum".into(), 0.9.into());
        assert!(file.train(&TrainArgs::default(), None).is_err());
    }
}
