//! Browser demo. Each export takes plain arguments and returns a JSON string
//! (or a JSON `{"error": ...}` object) for the page script to render.

use dialogue_reward::corpus::parse_corpus;
use dialogue_reward::eval::{evaluate_source, export_scatter, RewardPredictor};
use dialogue_reward::featurize::{featurize, featurize_all, SequenceSource, Window};
use dialogue_reward::gru::{predict, ModelConfig, ModelParams};
use dialogue_reward::noise::{build_pool, distort, substream};
use dialogue_reward::synth::{SynthConfig, SynthWorld};
use dialogue_reward::train::train_features;
use dialogue_reward::{generate_dataset, Result, TrainConfig};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Built-in corpus for the distortion panel.
pub const SAMPLE_CORPUS: &str = include_str!("sample.txt");

fn respond(r: Result<Value>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

#[wasm_bindgen]
pub fn sample_corpus() -> String {
    SAMPLE_CORPUS.to_string()
}

/// Replaces the first `noise` B-sentences of dialogue `index` in `corpus`.
#[wasm_bindgen]
pub fn distort_dialogue(corpus: &str, index: usize, noise: usize, seed: u64) -> String {
    respond(distort_value(corpus, index, noise, seed))
}

fn distort_value(corpus: &str, index: usize, noise: usize, seed: u64) -> Result<Value> {
    let dialogues = parse_corpus(corpus)?;
    let d = dialogues.get(index).ok_or_else(|| {
        dialogue_reward::Error::Config(format!("no dialogue {index} in {} dialogues", dialogues.len()))
    })?;
    let pool = build_pool(&dialogues)?;
    let out = distort(d, noise, &pool, &mut substream(seed, &d.id, noise))?;
    let turns: Vec<Value> = d
        .turns
        .iter()
        .zip(&out.dialogue.turns)
        .map(|(orig, new)| {
            json!({
                "a": orig.sentence_a.to_string(),
                "b": new.sentence_b.to_string(),
                "original_b": orig.sentence_b.to_string(),
                "replaced": orig.sentence_b != new.sentence_b,
            })
        })
        .collect();
    Ok(json!({
        "dialogues": dialogues.len(),
        "turns": turns,
        "noise": noise,
        "score": out.score,
    }))
}

fn demo_world(seed: u64) -> Result<SynthWorld> {
    SynthWorld::new(SynthConfig {
        vocab_size: 800,
        dim: 16,
        topics: 4,
        seed,
        ..SynthConfig::default()
    })
}

/// Feature matrix (`history` rows of sentence vectors) for one synthetic
/// dialogue at noise level `noise`.
#[wasm_bindgen]
pub fn feature_heatmap(history: usize, noise: usize, seed: u64) -> String {
    respond(heatmap_value(history, noise, seed))
}

fn heatmap_value(history: usize, noise: usize, seed: u64) -> Result<Value> {
    if history == 0 {
        return Err(dialogue_reward::Error::Config("history must be at least 1".into()));
    }
    let world = demo_world(seed)?;
    let dialogues = world.dialogues("demo", 20);
    let pool = build_pool(&dialogues)?;
    let d = &dialogues[0];
    let n = noise.min(d.num_turns());
    let scored = distort(d, n, &pool, &mut substream(seed, &d.id, n))?;
    let f = featurize(&scored, history, &world.embeddings, Window::Last);
    let rows: Vec<Vec<f64>> = f.vectors.rows().into_iter().map(|r| r.to_vec()).collect();
    // label each row with the sentence it came from; padding rows stay empty
    let sentences: Vec<String> = scored.dialogue.sentences().map(|s| s.to_string()).collect();
    let take = history.min(sentences.len());
    let mut labels = vec![String::new(); history - take];
    let first = sentences.len() - take;
    for k in first..sentences.len() {
        let speaker = if k % 2 == 0 { "A" } else { "B" };
        let replaced = k % 2 == 1 && k / 2 < n;
        labels.push(format!("{speaker}{}{}", k / 2 + 1, if replaced { "*" } else { "" }));
    }
    Ok(json!({
        "turns": d.num_turns(),
        "noise": n,
        "score": scored.score,
        "rows": rows,
        "labels": labels,
        "sentences": &sentences[first..],
    }))
}

struct Trained<'a> {
    model: &'a ModelConfig,
    params: &'a ModelParams,
    history: usize,
}

impl RewardPredictor for Trained<'_> {
    fn history_length(&self) -> usize {
        self.history
    }

    fn input_dim(&self) -> usize {
        self.model.input_dim
    }

    fn predict<S: SequenceSource + ?Sized>(&self, source: &S) -> Result<Vec<f64>> {
        predict(source, self.params, self.model, 128)
    }
}

/// Trains a small regressor on synthetic scored dialogues and returns the
/// learning curve, test correlation and a jittered scatter.
#[wasm_bindgen]
pub fn train_tiny(history: usize, epochs: usize, seed: u64) -> String {
    respond(train_value(history, epochs, seed))
}

fn train_value(history: usize, epochs: usize, seed: u64) -> Result<Value> {
    if history == 0 {
        return Err(dialogue_reward::Error::Config("history must be at least 1".into()));
    }
    let world = demo_world(seed)?;
    let train = generate_dataset(&world.dialogues("train", 120), seed)?;
    let test = generate_dataset(&world.dialogues("test", 30), seed + 1)?;
    let model = ModelConfig {
        input_dim: 16,
        hidden_dim: 16,
        num_layers: 1,
        dropout_rate: 0.1,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        batch_size: 32,
        max_epochs: epochs.clamp(1, 60),
        patience: epochs.clamp(1, 60),
        learning_rate: 1e-2,
        seed,
        ..TrainConfig::default()
    };
    let train_f = featurize_all(&train, history, &world.embeddings, Window::Last);
    let test_f = featurize_all(&test, history, &world.embeddings, Window::Last);
    let (params, report) = train_features(&train_f, &model, &cfg, |_| {})?;
    let trained = Trained {
        model: &model,
        params: &params,
        history,
    };
    let eval = evaluate_source(&trained, &test_f, seed)?;
    let scatter = export_scatter(&eval, 0.3, seed)?;
    Ok(json!({
        "history": history,
        "train_examples": train.len(),
        "test_examples": test.len(),
        "epochs": report.epochs,
        "best_epoch": report.best_epoch,
        "pearson_r": eval.pearson_r,
        "mae": eval.mae,
        "scatter": scatter.rows,
    }))
}
