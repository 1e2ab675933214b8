//! Synthetic topical corpora with matching word vectors.
//!
//! Stand-in data for running the full pipeline without an external dialogue
//! corpus or embedding file. Every dialogue sticks to one topic; a topic owns
//! a block of the vocabulary whose vectors cluster around a topic centroid,
//! and a shared block of function words is scattered around the origin. A
//! B-sentence transplanted from another dialogue therefore usually carries a
//! different topic than the A-sentences around it, which is the signal a
//! reward model has to pick up from the sentence vectors.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, DialogueTurn, Sentence};
use crate::error::{Error, Result};
use crate::featurize::EmbeddingTable;
use crate::noise::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub topics: usize,
    /// Fraction of the vocabulary shared by all topics.
    pub function_fraction: f64,
    pub min_turns: usize,
    pub max_turns: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Probability that a token is drawn from the dialogue topic.
    pub topic_word_prob: f64,
    /// Spread of topic words around their centroid.
    pub word_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 10_000,
            dim: 100,
            topics: 12,
            function_fraction: 0.1,
            min_turns: 4,
            max_turns: 11,
            min_words: 6,
            max_words: 16,
            topic_word_prob: 0.5,
            word_noise: 0.6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let function = self.function_words();
        if self.dim == 0
            || self.topics == 0
            || function == 0
            || self.vocab_size < function + self.topics
            || self.min_turns == 0
            || self.min_turns > self.max_turns
            || self.min_words == 0
            || self.min_words > self.max_words
            || !(0.0..=1.0).contains(&self.topic_word_prob)
            || !(self.word_noise >= 0.0)
        {
            return Err(Error::Config("invalid synthetic corpus config".into()));
        }
        Ok(())
    }

    fn function_words(&self) -> usize {
        ((self.vocab_size as f64 * self.function_fraction) as usize).max(1)
    }
}

/// Vocabulary layout and vectors shared by every split generated from it.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    cfg: SynthConfig,
    pub embeddings: EmbeddingTable,
}

fn token(i: usize) -> String {
    format!("w{i}")
}

impl SynthWorld {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = substream(cfg.seed, "synth-vectors", 0);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let centroids: Vec<Vec<f64>> = (0..cfg.topics)
            .map(|_| (0..cfg.dim).map(|_| unit.sample(&mut rng)).collect())
            .collect();
        let mut embeddings = EmbeddingTable::new(cfg.dim);
        let function = cfg.function_words();
        let mut v = vec![0.0; cfg.dim];
        for i in 0..cfg.vocab_size {
            if i < function {
                v.iter_mut().for_each(|x| *x = 0.5 * unit.sample(&mut rng));
            } else {
                let topic = (i - function) % cfg.topics;
                for (x, c) in v.iter_mut().zip(&centroids[topic]) {
                    *x = c + cfg.word_noise * unit.sample(&mut rng);
                }
            }
            embeddings.insert(&token(i), &v)?;
        }
        Ok(SynthWorld { cfg, embeddings })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    fn sentence(&self, topic: usize, rng: &mut impl Rng) -> Sentence {
        let cfg = &self.cfg;
        let function = cfg.function_words();
        let per_topic = (cfg.vocab_size - function - topic).div_ceil(cfg.topics);
        let len = rng.random_range(cfg.min_words..=cfg.max_words);
        Sentence::from_tokens((0..len).map(|_| {
            if rng.random_bool(cfg.topic_word_prob) {
                token(function + topic + cfg.topics * rng.random_range(0..per_topic))
            } else {
                token(rng.random_range(0..function))
            }
        }))
    }

    /// `count` dialogues drawn from the substream `split`. Ids are
    /// `{split}-{index}`.
    pub fn dialogues(&self, split: &str, count: usize) -> Vec<Dialogue> {
        (0..count)
            .map(|i| {
                let mut rng = substream(self.cfg.seed, split, i);
                let topic = rng.random_range(0..self.cfg.topics);
                let turns = rng.random_range(self.cfg.min_turns..=self.cfg.max_turns);
                Dialogue {
                    id: format!("{split}-{i}"),
                    turns: (0..turns)
                        .map(|_| DialogueTurn {
                            sentence_a: self.sentence(topic, &mut rng),
                            sentence_b: self.sentence(topic, &mut rng),
                        })
                        .collect(),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{compute_stats, parse_corpus, write_corpus};
    use crate::featurize::sentence_vector;

    fn small() -> SynthConfig {
        SynthConfig {
            vocab_size: 300,
            dim: 8,
            topics: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn dialogues_respect_config() {
        let world = SynthWorld::new(small()).unwrap();
        assert_eq!(world.embeddings.len(), 300);
        let ds = world.dialogues("train", 20);
        assert_eq!(ds.len(), 20);
        for d in &ds {
            assert!((4..=11).contains(&d.num_turns()));
            for s in d.sentences() {
                assert!((6..=16).contains(&s.len()));
                assert!(s.tokens().iter().all(|t| world.embeddings.get(t).is_some()));
            }
        }
        let stats = compute_stats(&ds).unwrap();
        assert!(stats.mean_turns >= 4.0 && stats.mean_turns <= 11.0);
    }

    #[test]
    fn generation_is_deterministic_and_serializable() {
        let a = SynthWorld::new(small()).unwrap();
        let b = SynthWorld::new(small()).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
        let da = a.dialogues("test", 5);
        assert_eq!(da, b.dialogues("test", 5));
        assert_ne!(da, a.dialogues("train", 5));
        let reparsed = parse_corpus(&write_corpus(&da)).unwrap();
        for (x, y) in da.iter().zip(&reparsed) {
            assert_eq!(x.turns, y.turns);
        }
    }

    #[test]
    fn same_topic_sentences_are_closer() {
        let world = SynthWorld::new(SynthConfig {
            topic_word_prob: 0.8,
            ..small()
        })
        .unwrap();
        let mut rng = substream(1, "t", 0);
        let dist = |a: &Sentence, b: &Sentence| {
            let d = sentence_vector(a, &world.embeddings) - sentence_vector(b, &world.embeddings);
            d.dot(&d)
        };
        let (mut same, mut diff) = (0.0, 0.0);
        for _ in 0..50 {
            let a = world.sentence(0, &mut rng);
            same += dist(&a, &world.sentence(0, &mut rng));
            diff += dist(&a, &world.sentence(1, &mut rng));
        }
        assert!(same < diff);
    }

    #[test]
    fn invalid_config() {
        assert!(SynthWorld::new(SynthConfig {
            min_turns: 5,
            max_turns: 4,
            ..small()
        })
        .is_err());
    }
}
