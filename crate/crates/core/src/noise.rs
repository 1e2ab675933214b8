//! Noise-graded dialogue generation.
//!
//! Each seed dialogue with `T` turns expands into `T + 1` scored dialogues, one
//! per noise level `n = 0..=T`. At level `n` the B-sentences of the first `n`
//! turns are swapped for B-sentences sampled from other dialogues, and the
//! score is `T - 2n`: every untouched human turn counts `+1`, every replaced
//! one `-1`.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{self, Dialogue, Sentence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredDialogue {
    pub dialogue: Dialogue,
    pub score: i64,
    pub noise_level: usize,
    pub source_id: String,
}

#[derive(Debug, Clone)]
struct PoolEntry {
    sentence: Sentence,
    source: usize,
}

/// Every B-sentence of a corpus, tagged with the dialogue it came from.
#[derive(Debug, Clone)]
pub struct ReplacementPool {
    entries: Vec<PoolEntry>,
    sources: Vec<String>,
    index: HashMap<String, usize>,
}

impl ReplacementPool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Sentence, &str)> {
        self.entries
            .iter()
            .map(|e| (&e.sentence, self.sources[e.source].as_str()))
    }

    fn source_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Uniform draw over entries whose provenance is not `exclude_source` and
    /// whose text differs from `original`.
    fn sample(
        &self,
        exclude_source: Option<usize>,
        original: &Sentence,
        rng: &mut impl Rng,
    ) -> Option<&Sentence> {
        let allowed =
            |e: &PoolEntry| Some(e.source) != exclude_source && e.sentence != *original;
        // rejection sampling is uniform over the allowed set; fall back to an
        // explicit scan when the allowed set is tiny
        for _ in 0..64 {
            let e = &self.entries[rng.random_range(0..self.entries.len())];
            if allowed(e) {
                return Some(&e.sentence);
            }
        }
        let candidates: Vec<&PoolEntry> = self.entries.iter().filter(|e| allowed(e)).collect();
        if candidates.is_empty() {
            None
        } else {
            Some(&candidates[rng.random_range(0..candidates.len())].sentence)
        }
    }
}

pub fn build_pool(corpus: &[Dialogue]) -> Result<ReplacementPool> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let sources: Vec<String> = corpus.iter().map(|d| d.id.clone()).collect();
    let index = sources
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i))
        .collect();
    let entries = corpus
        .iter()
        .enumerate()
        .flat_map(|(source, d)| {
            d.turns.iter().map(move |t| PoolEntry {
                sentence: t.sentence_b.clone(),
                source,
            })
        })
        .collect();
    Ok(ReplacementPool {
        entries,
        sources,
        index,
    })
}

/// Deterministic RNG substream for one (seed, dialogue, noise level) triple.
pub fn substream(seed: u64, dialogue_id: &str, noise: usize) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((dialogue_id.len() as u64).to_le_bytes());
    hasher.update(dialogue_id.as_bytes());
    hasher.update((noise as u64).to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

pub fn score_for(turns: usize, noise: usize) -> i64 {
    turns as i64 - 2 * noise as i64
}

pub fn distort(
    seed: &Dialogue,
    n: usize,
    pool: &ReplacementPool,
    rng: &mut impl Rng,
) -> Result<ScoredDialogue> {
    let turns = seed.num_turns();
    if n > turns {
        return Err(Error::NoiseOutOfRange { noise: n, turns });
    }
    let exclude = pool.source_index(&seed.id);
    let mut dialogue = seed.clone();
    dialogue.id = scored_id(&seed.id, n);
    for turn in dialogue.turns.iter_mut().take(n) {
        let replacement = pool
            .sample(exclude, &turn.sentence_b, rng)
            .ok_or_else(|| Error::PoolExhausted(seed.id.clone()))?;
        turn.sentence_b = replacement.clone();
    }
    Ok(ScoredDialogue {
        dialogue,
        score: score_for(turns, n),
        noise_level: n,
        source_id: seed.id.clone(),
    })
}

fn scored_id(source: &str, noise: usize) -> String {
    format!("{source}/n{noise}")
}

fn expand(d: &Dialogue, pool: &ReplacementPool, seed: u64) -> Result<Vec<ScoredDialogue>> {
    (0..=d.num_turns())
        .map(|n| distort(d, n, pool, &mut substream(seed, &d.id, n)))
        .collect()
}

/// Expands every seed dialogue into its `T + 1` noise levels. Replacements
/// come from `corpus` itself, so test splits never borrow training sentences.
pub fn generate_dataset(corpus: &[Dialogue], seed: u64) -> Result<Vec<ScoredDialogue>> {
    let pool = build_pool(corpus)?;

    #[cfg(feature = "parallel")]
    let nested: Vec<Vec<ScoredDialogue>> = {
        use rayon::prelude::*;
        corpus
            .par_iter()
            .map(|d| expand(d, &pool, seed))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let nested: Vec<Vec<ScoredDialogue>> = corpus
        .iter()
        .map(|d| expand(d, &pool, seed))
        .collect::<Result<_>>()?;

    Ok(nested.into_iter().flatten().collect())
}

pub fn write_scored(dataset: &[ScoredDialogue]) -> String {
    let mut out = String::new();
    for (i, sd) in dataset.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!(
            "# score={} noise={} source={}\n",
            sd.score, sd.noise_level, sd.source_id
        ));
        corpus::write_turns(&mut out, &sd.dialogue.turns);
    }
    out
}

pub fn parse_scored(text: &str) -> Result<Vec<ScoredDialogue>> {
    corpus::parse_blocks(text)?
        .into_iter()
        .map(|block| {
            let (line, header) = block
                .headers
                .iter()
                .copied()
                .find(|(_, h)| h.starts_with("score="))
                .ok_or_else(|| Error::parse(block.first_line, "missing score header"))?;
            let mut score = None;
            let mut noise = None;
            let mut source = None;
            for field in header.split_whitespace() {
                let (key, value) = field
                    .split_once('=')
                    .ok_or_else(|| Error::parse(line, format!("malformed header field {field:?}")))?;
                match key {
                    "score" => score = value.parse::<i64>().ok(),
                    "noise" => noise = value.parse::<usize>().ok(),
                    "source" => source = Some(value.to_string()),
                    _ => {}
                }
            }
            let (score, noise_level, source_id) = match (score, noise, source) {
                (Some(s), Some(n), Some(src)) => (s, n, src),
                _ => return Err(Error::parse(line, "header needs score, noise and source")),
            };
            let turns = block.turns.len();
            if noise_level > turns || score != score_for(turns, noise_level) {
                return Err(Error::parse(
                    line,
                    format!("score {score} inconsistent with {turns} turns at noise {noise_level}"),
                ));
            }
            Ok(ScoredDialogue {
                dialogue: Dialogue {
                    id: scored_id(&source_id, noise_level),
                    turns: block.turns,
                },
                score,
                noise_level,
                source_id,
            })
        })
        .collect()
}

pub fn read_scored(path: impl AsRef<Path>) -> Result<Vec<ScoredDialogue>> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    parse_scored(&text)
}
