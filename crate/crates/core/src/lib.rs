//! Dialogue reward prediction from noise-graded dialogues.
//!
//! The pipeline: parse a two-party corpus ([`corpus`]), expand it into scored
//! dialogues with prefix distortions ([`noise`]), turn each dialogue history
//! into mean word vectors ([`featurize`]), fit a stacked GRU regressor
//! ([`gru`], [`train`]) and measure Pearson correlation between true and
//! predicted rewards ([`eval`]).

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod gru;
pub mod noise;
pub mod synth;
pub mod train;

pub use checkpoint::{Checkpoint, EmbeddingRef};
pub use corpus::{compute_stats, parse_corpus, CorpusStats, Dialogue, DialogueTurn, Sentence};
pub use error::{Error, Result};
pub use eval::{evaluate, export_scatter, pearson, run_sweep, EvalReport, SweepConfig, SweepReport};
pub use featurize::{
    featurize, load_embeddings, sentence_vector, EmbeddingTable, FeatureSequence, Window,
};
pub use gru::{count_params, init_params, ModelConfig, ModelParams};
pub use noise::{build_pool, distort, generate_dataset, ReplacementPool, ScoredDialogue};
pub use train::{mae, train, TrainConfig, TrainReport};
