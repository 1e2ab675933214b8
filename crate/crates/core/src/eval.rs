//! Correlation metrics, history-length sweeps and plot-data export.

use std::fmt::Write as _;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::featurize::{EmbeddingTable, LazyFeatures, SequenceSource, Window};
use crate::gru::{self, ModelConfig};
use crate::noise::{substream, ScoredDialogue};
use crate::train::{self, mae, TrainConfig};

/// Pearson correlation coefficient. Undefined (an error) when either input
/// has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Anything that maps feature sequences to predicted rewards.
pub trait RewardPredictor {
    fn history_length(&self) -> usize;

    fn input_dim(&self) -> usize;

    fn predict<S: SequenceSource + ?Sized>(&self, source: &S) -> Result<Vec<f64>>;
}

impl RewardPredictor for Checkpoint {
    fn history_length(&self) -> usize {
        self.history_length
    }

    fn input_dim(&self) -> usize {
        self.model.input_dim
    }

    fn predict<S: SequenceSource + ?Sized>(&self, source: &S) -> Result<Vec<f64>> {
        gru::predict(source, &self.params, &self.model, 256)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub history_length: usize,
    pub seed: u64,
    pub pearson_r: f64,
    pub mae: f64,
    /// `(target, prediction)` per test example, in test-set order.
    pub pairs: Vec<(f64, f64)>,
}

/// Scores a predictor on pre-built test features.
pub fn evaluate_source<P, S>(model: &P, test: &S, seed: u64) -> Result<EvalReport>
where
    P: RewardPredictor,
    S: SequenceSource + ?Sized,
{
    if !test.is_empty() && test.dim() != model.input_dim() {
        return Err(Error::Config(format!(
            "test features have dim {}, model expects {}",
            test.dim(),
            model.input_dim()
        )));
    }
    let preds = model.predict(test)?;
    let targets: Vec<f64> = (0..test.len()).map(|i| test.target(i)).collect();
    Ok(EvalReport {
        history_length: model.history_length(),
        seed,
        pearson_r: pearson(&targets, &preds)?,
        mae: mae(&preds, &targets)?,
        pairs: targets.into_iter().zip(preds).collect(),
    })
}

/// Infer-mode evaluation of a checkpoint on a scored test set.
pub fn evaluate(
    checkpoint: &Checkpoint,
    test: &[ScoredDialogue],
    table: &EmbeddingTable,
    history: usize,
    seed: u64,
) -> Result<EvalReport> {
    if checkpoint.history_length != history {
        return Err(Error::Config(format!(
            "checkpoint was trained with history {}, asked for {history}",
            checkpoint.history_length
        )));
    }
    if table.dim() != checkpoint.model.input_dim {
        return Err(Error::Config(format!(
            "embedding dim {} differs from model input dim {}",
            table.dim(),
            checkpoint.model.input_dim
        )));
    }
    let source = LazyFeatures {
        dialogues: test,
        table,
        history,
        window: checkpoint.window,
    };
    evaluate_source(checkpoint, &source, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub lengths: Vec<usize>,
    pub runs: usize,
    pub base_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub window: Window,
    /// Worker threads for independent (length, run) jobs.
    pub jobs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            lengths: vec![1, 3, 5, 10, 25, 50],
            runs: 10,
            base_seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            window: Window::Last,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub pearson_r: f64,
    pub test_mae: f64,
    pub best_valid_mae: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub history_length: usize,
    pub runs: Vec<RunResult>,
    pub mean_r: f64,
    pub std_r: f64,
    /// Index into `runs` of the run with the lowest validation MAE.
    pub best_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
}

impl SweepReport {
    /// `history_length,mean_r,std_r` rows.
    pub fn bar_csv(&self) -> String {
        let mut out = String::from("history_length,mean_r,std_r\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{}", e.history_length, e.mean_r, e.std_r);
        }
        out
    }
}

/// Sweep results plus the test-set evaluation of every run, in the order of
/// `SweepReport::entries` and their runs.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: SweepReport,
    pub evals: Vec<Vec<EvalReport>>,
}

impl SweepOutcome {
    /// Evaluation of the best-validation run for each history length.
    pub fn best_evals(&self) -> Vec<&EvalReport> {
        self.report
            .entries
            .iter()
            .zip(&self.evals)
            .map(|(e, evals)| &evals[e.best_run])
            .collect()
    }
}

struct Job {
    entry: usize,
    history: usize,
    run: usize,
}

fn run_job(
    job: &Job,
    cfg: &SweepConfig,
    train_data: &[ScoredDialogue],
    test_data: &[ScoredDialogue],
    table: &EmbeddingTable,
) -> Result<(RunResult, EvalReport)> {
    let seed = cfg.base_seed + job.run as u64;
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let train_src = LazyFeatures {
        dialogues: train_data,
        table,
        history: job.history,
        window: cfg.window,
    };
    let (params, report) = train::train_features(&train_src, &cfg.model, &train_cfg, |_| {})?;
    let checkpoint = Checkpoint {
        model: cfg.model.clone(),
        history_length: job.history,
        window: cfg.window,
        embedding: None,
        params,
    };
    let eval = evaluate(&checkpoint, test_data, table, job.history, seed)?;
    Ok((
        RunResult {
            run: job.run,
            seed,
            pearson_r: eval.pearson_r,
            test_mae: eval.mae,
            best_valid_mae: report.best_valid_mae(),
            best_epoch: report.best_epoch,
            epochs_run: report.epochs.len(),
        },
        eval,
    ))
}

/// Trains `runs` models per history length (seeds `base_seed + run`),
/// evaluates each on the test set and aggregates per length.
pub fn run_sweep(
    cfg: &SweepConfig,
    train_data: &[ScoredDialogue],
    test_data: &[ScoredDialogue],
    table: &EmbeddingTable,
) -> Result<SweepOutcome> {
    if cfg.lengths.is_empty() || cfg.runs == 0 {
        return Err(Error::Config("sweep needs at least one length and one run".into()));
    }
    if cfg.lengths.contains(&0) {
        return Err(Error::Config("history length must be at least 1".into()));
    }
    if table.dim() != cfg.model.input_dim {
        return Err(Error::Config(format!(
            "embedding dim {} differs from model input dim {}",
            table.dim(),
            cfg.model.input_dim
        )));
    }
    let jobs: Vec<Job> = cfg
        .lengths
        .iter()
        .enumerate()
        .flat_map(|(entry, &history)| (0..cfg.runs).map(move |run| Job { entry, history, run }))
        .collect();

    let results: Vec<(RunResult, EvalReport)> = run_jobs(&jobs, cfg, train_data, test_data, table)?;

    let mut entries: Vec<SweepEntry> = cfg
        .lengths
        .iter()
        .map(|&history_length| SweepEntry {
            history_length,
            runs: Vec::new(),
            mean_r: 0.0,
            std_r: 0.0,
            best_run: 0,
        })
        .collect();
    let mut evals: Vec<Vec<EvalReport>> = vec![Vec::new(); cfg.lengths.len()];
    for (job, (result, eval)) in jobs.iter().zip(results) {
        entries[job.entry].runs.push(result);
        evals[job.entry].push(eval);
    }
    for e in &mut entries {
        let rs: Vec<f64> = e.runs.iter().map(|r| r.pearson_r).collect();
        let (mean, std) = mean_std(&rs);
        e.mean_r = mean;
        e.std_r = std;
        e.best_run = e
            .runs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.best_valid_mae.total_cmp(&b.1.best_valid_mae))
            .map_or(0, |(i, _)| i);
    }
    Ok(SweepOutcome {
        report: SweepReport { entries },
        evals,
    })
}

#[cfg(feature = "parallel")]
fn run_jobs(
    jobs: &[Job],
    cfg: &SweepConfig,
    train_data: &[ScoredDialogue],
    test_data: &[ScoredDialogue],
    table: &EmbeddingTable,
) -> Result<Vec<(RunResult, EvalReport)>> {
    use rayon::prelude::*;
    if cfg.jobs <= 1 {
        return jobs
            .iter()
            .map(|j| run_job(j, cfg, train_data, test_data, table))
            .collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|j| run_job(j, cfg, train_data, test_data, table))
            .collect()
    })
}

#[cfg(not(feature = "parallel"))]
fn run_jobs(
    jobs: &[Job],
    cfg: &SweepConfig,
    train_data: &[ScoredDialogue],
    test_data: &[ScoredDialogue],
    table: &EmbeddingTable,
) -> Result<Vec<(RunResult, EvalReport)>> {
    jobs.iter()
        .map(|j| run_job(j, cfg, train_data, test_data, table))
        .collect()
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Scatter rows with Gaussian jitter on the target axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterExport {
    /// `(jittered target, prediction)` per example.
    pub rows: Vec<(f64, f64)>,
    /// Sample mean of the applied jitter.
    pub jitter_mean: f64,
    /// `4 * sigma / sqrt(N)`: the jitter mean should fall inside this bound.
    pub jitter_bound: f64,
}

impl ScatterExport {
    pub fn jitter_within_bound(&self) -> bool {
        self.jitter_mean.abs() <= self.jitter_bound
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_jittered,predicted\n");
        for (x, y) in &self.rows {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }
}

pub fn export_scatter(report: &EvalReport, sigma: f64, seed: u64) -> Result<ScatterExport> {
    if report.pairs.is_empty() {
        return Err(Error::Config("empty evaluation report".into()));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("invalid jitter sigma {sigma}")));
    }
    let mut rng = substream(seed, "scatter", report.history_length);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut jitter_sum = 0.0;
    let rows: Vec<(f64, f64)> = report
        .pairs
        .iter()
        .map(|&(target, pred)| {
            let noise = if sigma == 0.0 { 0.0 } else { normal.sample(&mut rng) };
            jitter_sum += noise;
            (target + noise, pred)
        })
        .collect();
    let n = rows.len() as f64;
    Ok(ScatterExport {
        rows,
        jitter_mean: jitter_sum / n,
        jitter_bound: 4.0 * sigma / n.sqrt(),
    })
}
