//! Reduced-scale history-length sweep on synthetic data.
//!
//! `cargo run --release -p dialogue-reward --example reduced_sweep -- [hidden] [layers] [max_epochs] [lengths] [runs]`
//! where `lengths` is comma-separated, e.g. `1,10,25`.

use std::time::Instant;

use dialogue_reward::eval::run_sweep;
use dialogue_reward::synth::{SynthConfig, SynthWorld};
use dialogue_reward::{generate_dataset, ModelConfig, SweepConfig, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());
    let hidden: usize = arg(0, "32").parse()?;
    let layers: usize = arg(1, "1").parse()?;
    let max_epochs: usize = arg(2, "30").parse()?;
    let lengths: Vec<usize> = arg(3, "1,10,25")
        .split(',')
        .map(str::parse)
        .collect::<Result<_, _>>()?;
    let runs: usize = arg(4, "3").parse()?;

    let world = SynthWorld::new(SynthConfig::default())?;
    let train = generate_dataset(&world.dialogues("train", 1000), 0)?;
    let test = generate_dataset(&world.dialogues("test", 200), 1)?;
    println!("{} train / {} test scored dialogues", train.len(), test.len());

    let cfg = SweepConfig {
        lengths,
        runs,
        model: ModelConfig {
            hidden_dim: hidden,
            num_layers: layers,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            max_epochs,
            patience: max_epochs.min(5),
            ..TrainConfig::default()
        },
        ..SweepConfig::default()
    };
    let start = Instant::now();
    let outcome = run_sweep(&cfg, &train, &test, &world.embeddings)?;
    for e in &outcome.report.entries {
        let rs: Vec<String> = e
            .runs
            .iter()
            .map(|r| format!("{:.3}@{}", r.pearson_r, r.epochs_run))
            .collect();
        println!("L={:<3} mean r={:.3} std={:.3} runs [{}]", e.history_length, e.mean_r, e.std_r, rs.join(" "));
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
