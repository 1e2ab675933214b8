//! `dreward`: every pipeline stage behind one command.
//!
//! Errors go to stderr as a single JSON line. Exit codes: 1 other failure,
//! 2 usage, 3 unreadable or unwritable file, 4 malformed input data.

mod config;
mod manifest;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dialogue_reward::corpus::read_corpus;
use dialogue_reward::eval::{export_scatter, run_sweep, EvalReport, SweepConfig};
use dialogue_reward::featurize::{
    featurize_all, load_embeddings, read_feature_cache, vocabulary, write_feature_cache,
    LazyFeatures, Window,
};
use dialogue_reward::noise::{read_scored, write_scored};
use dialogue_reward::synth::{SynthConfig, SynthWorld};
use dialogue_reward::train::{train_features, TrainReport};
use dialogue_reward::{
    compute_stats, evaluate, generate_dataset, Checkpoint, EmbeddingRef, EmbeddingTable, Error,
    ScoredDialogue,
};
use serde_json::json;

use config::{ConfigFile, ModelArgs, TrainArgs};
use manifest::{default_path, file_sha256, Manifest};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Data(String),
    Other(String),
}

impl CliError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Data(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Other(_) => "error",
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "io",
            CliError::Data(_) => "data",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Data(m) | CliError::Other(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) => CliError::Io(msg),
            Error::Config(_) => CliError::Usage(msg),
            Error::Parse { .. }
            | Error::EmptyCorpus
            | Error::NoiseOutOfRange { .. }
            | Error::PoolExhausted(_)
            | Error::Shape(_)
            | Error::Checkpoint(_)
            | Error::Json(_) => CliError::Data(msg),
            Error::NonFinite(_) | Error::UndefinedCorrelation(_) => CliError::Other(msg),
        }
    }
}

/// Attaches the file name to errors raised while reading `path`.
fn at<T>(path: &Path, r: dialogue_reward::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| match CliError::from(e) {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "dreward", version, about = "Dialogue reward prediction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus statistics as one JSON object.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Expand a corpus into noise-graded scored dialogues.
    Generate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Write a binary feature cache for one history length.
    Featurize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        emb: PathBuf,
        #[arg(long)]
        history: usize,
        #[arg(long, default_value_t = 100)]
        dim: usize,
        #[arg(long, default_value = "last")]
        window: Window,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train a reward regressor and write a checkpoint.
    Train {
        /// Scored dialogues (requires --emb).
        #[arg(long, required_unless_present = "features")]
        data: Option<PathBuf>,
        #[arg(long, requires = "data")]
        emb: Option<PathBuf>,
        /// Feature cache written by `featurize`, instead of --data/--emb.
        #[arg(long, conflicts_with_all = ["data", "emb", "history", "window"])]
        features: Option<PathBuf>,
        #[arg(long, required_unless_present = "features")]
        history: Option<usize>,
        #[arg(long)]
        window: Option<Window>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch JSON lines; defaults to `<out>.report.jsonl`.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Pearson correlation and MAE of a checkpoint on scored test data.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the embedding file recorded in the checkpoint.
        #[arg(long)]
        emb: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train and evaluate repeated runs for several history lengths.
    Sweep {
        #[arg(long)]
        train_data: PathBuf,
        #[arg(long)]
        test_data: PathBuf,
        #[arg(long)]
        emb: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,10,25,50")]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        base_seed: u64,
        #[arg(long, default_value = "last")]
        window: Window,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Predicted reward of every dialogue in a corpus file, one per line.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dialogue: PathBuf,
        /// Defaults to the embedding file recorded in the checkpoint.
        #[arg(long)]
        emb: Option<PathBuf>,
    },
    /// Jittered scatter CSV from an evaluation report.
    ExportScatter {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        sigma: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Synthetic train/test corpora with matching word vectors.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1000)]
        train_dialogues: usize,
        #[arg(long, default_value_t = 200)]
        test_dialogues: usize,
        #[arg(long, default_value_t = 10_000)]
        vocab: usize,
        #[arg(long, default_value_t = 100)]
        dim: usize,
        #[arg(long, default_value_t = 12)]
        topics: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            if code != 0 {
                report_error(&CliError::Usage(
                    e.to_string().lines().next().unwrap_or_default().to_string(),
                ));
            }
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::from(e.code())
        }
    }
}

fn report_error(e: &CliError) {
    eprintln!(
        "{}",
        json!({"error": e.kind(), "code": e.code(), "message": e.message()})
    );
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Stats { corpus } => {
            let dialogues = at(&corpus, read_corpus(&corpus))?;
            let stats = at(&corpus, compute_stats(&dialogues))?;
            println!("{}", json_line(&stats)?);
            Ok(())
        }
        Command::Generate {
            corpus,
            out,
            seed,
            manifest,
        } => {
            let mut m = Manifest::new("generate");
            m.input(&corpus).map_err(|e| CliError::io(&corpus, e))?;
            let dialogues = at(&corpus, read_corpus(&corpus))?;
            let dataset = at(&corpus, generate_dataset(&dialogues, seed))?;
            write_text(&out, &write_scored(&dataset))?;
            m.config = json!({"corpus": corpus, "out": out});
            m.seeds = json!({"seed": seed});
            m.output(&out);
            finish(&m, &out, manifest.as_deref())
        }
        Command::Featurize {
            data,
            emb,
            history,
            dim,
            window,
            out,
            manifest,
        } => {
            if history == 0 {
                return Err(CliError::Usage("--history must be at least 1".into()));
            }
            let mut m = Manifest::new("featurize");
            let dataset = load_scored(&data, &mut m)?;
            let table = load_table(&emb, dim, &dataset, &mut m)?;
            let features = featurize_all(&dataset, history, &table, window);
            let file = create(&out)?;
            let mut w = BufWriter::new(file);
            at(&out, write_feature_cache(&mut w, &features, history, dim, window))?;
            w.flush().map_err(|e| CliError::io(&out, e))?;
            m.config = json!({"history": history, "dim": dim, "window": window});
            m.seeds = json!({});
            m.output(&out);
            finish(&m, &out, manifest.as_deref())
        }
        Command::Train {
            data,
            emb,
            features,
            history,
            window,
            seed,
            out,
            report,
            config,
            model,
            train,
            manifest,
        } => {
            let file = ConfigFile::load(config.as_deref())?;
            let mut m = Manifest::new("train");
            if let Some(path) = &config {
                m.input(path).map_err(|e| CliError::io(path, e))?;
            }
            let train_cfg = file.train(&train, seed)?;
            let (model_cfg, params, train_report, history, window, embedding) =
                if let Some(cache) = features {
                    m.input(&cache).map_err(|e| CliError::io(&cache, e))?;
                    let f = File::open(&cache).map_err(|e| CliError::io(&cache, e))?;
                    let (header, feats) =
                        at(&cache, read_feature_cache(std::io::BufReader::new(f)))?;
                    let model_cfg = file.model(&ModelArgs {
                        dim: Some(header.dim),
                        ..model
                    })?;
                    let (params, rep) = train_features(&feats, &model_cfg, &train_cfg, |_| {})?;
                    (model_cfg, params, rep, header.history_length, header.window, None)
                } else {
                    let data = data.expect("clap enforces --data");
                    let emb = emb.ok_or_else(|| CliError::Usage("--data needs --emb".into()))?;
                    let history = history.expect("clap enforces --history");
                    if history == 0 {
                        return Err(CliError::Usage("--history must be at least 1".into()));
                    }
                    let window = window.unwrap_or_default();
                    let model_cfg = file.model(&model)?;
                    let dataset = load_scored(&data, &mut m)?;
                    let table = load_table(&emb, model_cfg.input_dim, &dataset, &mut m)?;
                    let source = LazyFeatures {
                        dialogues: &dataset,
                        table: &table,
                        history,
                        window,
                    };
                    let (params, rep) = train_features(&source, &model_cfg, &train_cfg, |_| {})?;
                    let embedding = embedding_ref(&emb, model_cfg.input_dim, &m);
                    (model_cfg, params, rep, history, window, Some(embedding))
                };
            let ckpt = Checkpoint {
                model: model_cfg.clone(),
                history_length: history,
                window,
                embedding,
                params,
            };
            ckpt.save(&out).map_err(|e| CliError::io(&out, e))?;
            let report_path = report.unwrap_or_else(|| suffixed(&out, ".report.jsonl"));
            write_text(&report_path, &train_report_lines(&train_report)?)?;
            m.config = json!({
                "model": model_cfg,
                "train": train_cfg,
                "history": history,
                "window": window,
            });
            m.seeds = json!({"seed": train_cfg.seed});
            m.output(&out);
            m.output(&report_path);
            finish(&m, &out, manifest.as_deref())
        }
        Command::Evaluate {
            checkpoint,
            data,
            emb,
            seed,
            out,
            manifest,
        } => {
            let mut m = Manifest::new("evaluate");
            let ckpt = load_checkpoint(&checkpoint, &mut m)?;
            let dataset = load_scored(&data, &mut m)?;
            let emb = resolve_embedding(&ckpt, emb)?;
            let table = load_table(&emb, ckpt.model.input_dim, &dataset, &mut m)?;
            let report = evaluate(&ckpt, &dataset, &table, ckpt.history_length, seed)?;
            write_text(&out, &json_pretty(&report)?)?;
            println!(
                "{}",
                json!({"history_length": report.history_length, "pearson_r": report.pearson_r, "mae": report.mae})
            );
            m.config = json!({"history": ckpt.history_length, "window": ckpt.window});
            m.seeds = json!({"seed": seed});
            m.output(&out);
            finish(&m, &out, manifest.as_deref())
        }
        Command::Sweep {
            train_data,
            test_data,
            emb,
            lengths,
            runs,
            base_seed,
            window,
            jobs,
            out_dir,
            config,
            model,
            train,
        } => {
            let file = ConfigFile::load(config.as_deref())?;
            let mut m = Manifest::new("sweep");
            if let Some(path) = &config {
                m.input(path).map_err(|e| CliError::io(path, e))?;
            }
            let model_cfg = file.model(&model)?;
            let train_cfg = file.train(&train, Some(base_seed))?;
            let train_set = load_scored(&train_data, &mut m)?;
            let test_set = load_scored(&test_data, &mut m)?;
            let both: Vec<&ScoredDialogue> = train_set.iter().chain(&test_set).collect();
            let vocab = vocabulary(both);
            let table = load_table_with(&emb, model_cfg.input_dim, &vocab, &mut m)?;
            let cfg = SweepConfig {
                lengths,
                runs,
                base_seed,
                model: model_cfg,
                train: train_cfg,
                window,
                jobs: jobs.max(1),
            };
            let outcome = run_sweep(&cfg, &train_set, &test_set, &table)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
            let sweep_path = out_dir.join("sweep.json");
            write_text(&sweep_path, &json_pretty(&outcome.report)?)?;
            m.output(&sweep_path);
            let bars = out_dir.join("bars.csv");
            write_text(&bars, &outcome.report.bar_csv())?;
            m.output(&bars);
            for eval in outcome.best_evals() {
                let path = out_dir.join(format!("eval-L{}.json", eval.history_length));
                write_text(&path, &json_pretty(eval)?)?;
                m.output(&path);
            }
            let seeds: Vec<u64> = (0..cfg.runs as u64).map(|r| base_seed + r).collect();
            m.config = serde_json::to_value(&cfg).map_err(|e| CliError::Other(e.to_string()))?;
            m.seeds = json!({"base_seed": base_seed, "run_seeds": seeds});
            let manifest_path = out_dir.join("manifest.json");
            m.write(&manifest_path).map_err(|e| CliError::io(&manifest_path, e))
        }
        Command::Predict {
            checkpoint,
            dialogue,
            emb,
        } => {
            let mut m = Manifest::new("predict");
            let ckpt = load_checkpoint(&checkpoint, &mut m)?;
            let dialogues = at(&dialogue, read_corpus(&dialogue))?;
            if dialogues.is_empty() {
                return Err(CliError::Data(format!("{}: no dialogues", dialogue.display())));
            }
            let scored: Vec<ScoredDialogue> = dialogues
                .into_iter()
                .map(|d| ScoredDialogue {
                    score: d.num_turns() as i64,
                    noise_level: 0,
                    source_id: d.id.clone(),
                    dialogue: d,
                })
                .collect();
            let emb = resolve_embedding(&ckpt, emb)?;
            let table = load_table(&emb, ckpt.model.input_dim, &scored, &mut m)?;
            let source = LazyFeatures {
                dialogues: &scored,
                table: &table,
                history: ckpt.history_length,
                window: ckpt.window,
            };
            let preds = dialogue_reward::gru::predict(&source, &ckpt.params, &ckpt.model, 256)?;
            for p in preds {
                println!("{p}");
            }
            Ok(())
        }
        Command::ExportScatter {
            report,
            sigma,
            seed,
            out,
            manifest,
        } => {
            let mut m = Manifest::new("export-scatter");
            m.input(&report).map_err(|e| CliError::io(&report, e))?;
            let text = std::fs::read_to_string(&report).map_err(|e| CliError::io(&report, e))?;
            let eval: EvalReport = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", report.display())))?;
            let scatter = export_scatter(&eval, sigma, seed)?;
            write_text(&out, &scatter.to_csv())?;
            let check = json!({
                "jitter_mean": scatter.jitter_mean,
                "jitter_bound": scatter.jitter_bound,
                "within_bound": scatter.jitter_within_bound(),
            });
            println!("{check}");
            m.config = json!({"sigma": sigma, "history": eval.history_length, "jitter": check});
            m.seeds = json!({"seed": seed});
            m.output(&out);
            finish(&m, &out, manifest.as_deref())
        }
        Command::Synth {
            out_dir,
            train_dialogues,
            test_dialogues,
            vocab,
            dim,
            topics,
            seed,
        } => {
            let cfg = SynthConfig {
                vocab_size: vocab,
                dim,
                topics,
                seed,
                ..SynthConfig::default()
            };
            let world = SynthWorld::new(cfg.clone())?;
            std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
            let mut m = Manifest::new("synth");
            let train_path = out_dir.join("train.txt");
            let test_path = out_dir.join("test.txt");
            let emb_path = out_dir.join("embeddings.txt");
            write_text(
                &train_path,
                &dialogue_reward::corpus::write_corpus(&world.dialogues("train", train_dialogues)),
            )?;
            write_text(
                &test_path,
                &dialogue_reward::corpus::write_corpus(&world.dialogues("test", test_dialogues)),
            )?;
            let f = create(&emb_path)?;
            let mut w = BufWriter::new(f);
            world
                .embeddings
                .write_text(&mut w)
                .and_then(|_| w.flush())
                .map_err(|e| CliError::io(&emb_path, e))?;
            m.config = json!({
                "synth": cfg,
                "train_dialogues": train_dialogues,
                "test_dialogues": test_dialogues,
            });
            m.seeds = json!({"seed": seed});
            for p in [&train_path, &test_path, &emb_path] {
                m.output(p);
            }
            let manifest_path = out_dir.join("manifest.json");
            m.write(&manifest_path).map_err(|e| CliError::io(&manifest_path, e))
        }
    }
}

fn finish(m: &Manifest, out: &Path, explicit: Option<&Path>) -> CliResult {
    let path = default_path(out, explicit);
    m.write(&path).map_err(|e| CliError::io(&path, e))
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn create(path: &Path) -> CliResult<File> {
    File::create(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn json_line<T: serde::Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string(value).map_err(|e| CliError::Other(e.to_string()))
}

fn json_pretty<T: serde::Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn train_report_lines(report: &TrainReport) -> CliResult<String> {
    report.to_json_lines().map_err(CliError::from)
}

fn load_scored(path: &Path, m: &mut Manifest) -> CliResult<Vec<ScoredDialogue>> {
    m.input(path).map_err(|e| CliError::io(path, e))?;
    at(path, read_scored(path))
}

fn load_table(
    path: &Path,
    dim: usize,
    dataset: &[ScoredDialogue],
    m: &mut Manifest,
) -> CliResult<EmbeddingTable> {
    load_table_with(path, dim, &vocabulary(dataset), m)
}

/// Loads only the vectors of `vocab`, so large embedding files stay cheap.
fn load_table_with(
    path: &Path,
    dim: usize,
    vocab: &HashSet<String>,
    m: &mut Manifest,
) -> CliResult<EmbeddingTable> {
    m.input(path).map_err(|e| CliError::io(path, e))?;
    at(path, load_embeddings(path, dim, Some(vocab)))
}

fn embedding_ref(path: &Path, dim: usize, m: &Manifest) -> EmbeddingRef {
    let shown = path.display().to_string();
    let sha256 = m
        .inputs
        .iter()
        .find(|i| i.path == shown)
        .map(|i| i.sha256.clone())
        .unwrap_or_default();
    let absolute = std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf());
    EmbeddingRef {
        path: absolute.display().to_string(),
        sha256,
        dim,
    }
}

fn load_checkpoint(path: &Path, m: &mut Manifest) -> CliResult<Checkpoint> {
    m.input(path).map_err(|e| CliError::io(path, e))?;
    at(path, Checkpoint::load(path))
}

/// `--emb` if given, else the checkpoint's recorded file, whose digest must
/// still match.
fn resolve_embedding(ckpt: &Checkpoint, explicit: Option<PathBuf>) -> CliResult<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p);
    }
    let Some(r) = &ckpt.embedding else {
        return Err(CliError::Usage(
            "checkpoint records no embedding file; pass --emb".into(),
        ));
    };
    let path = PathBuf::from(&r.path);
    let digest = file_sha256(&path).map_err(|e| CliError::io(&path, e))?;
    if digest != r.sha256 {
        return Err(CliError::Data(format!(
            "{}: digest differs from the one recorded at training time",
            path.display()
        )));
    }
    Ok(path)
}
