//! Two-party dialogue corpora in the plain-text block format.
//!
//! One dialogue per block, blocks separated by a single blank line. Inside a
//! block, lines alternate `A: <text>` / `B: <text>` starting with `A`. Lines
//! starting with `#` at the top of a block are metadata; plain corpora ignore
//! them, scored-dialogue files use them for the score header.

use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A tokenized utterance. Tokens are lowercase and never contain whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    tokens: Vec<String>,
}

impl Sentence {
    /// Lowercases `text` and splits it on spaces. Returns `None` when nothing
    /// but whitespace is left.
    pub fn parse(text: &str) -> Option<Self> {
        let tokens: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
        if tokens.is_empty() {
            None
        } else {
            Some(Sentence { tokens })
        }
    }

    /// Builds a sentence from already-normalized tokens.
    ///
    /// Empty tokens are dropped; tokens containing whitespace are split.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let tokens = tokens
            .into_iter()
            .flat_map(|t| {
                t.as_ref()
                    .split_whitespace()
                    .map(str::to_lowercase)
                    .collect::<Vec<_>>()
            })
            .collect();
        Sentence { tokens }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub sentence_a: Sentence,
    pub sentence_b: Sentence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<DialogueTurn>,
}

impl Dialogue {
    pub fn num_turns(&self) -> usize {
        self.turns.len()
    }

    /// Interleaved sentence sequence `A1, B1, A2, B2, ...`.
    pub fn sentences(&self) -> impl DoubleEndedIterator<Item = &Sentence> + ExactSizeIterator {
        Interleaved {
            turns: &self.turns,
            front: 0,
            back: 2 * self.turns.len(),
        }
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences().map(Sentence::len).sum()
    }
}

struct Interleaved<'a> {
    turns: &'a [DialogueTurn],
    front: usize,
    back: usize,
}

impl<'a> Interleaved<'a> {
    fn at(&self, idx: usize) -> &'a Sentence {
        let turn = &self.turns[idx / 2];
        if idx % 2 == 0 {
            &turn.sentence_a
        } else {
            &turn.sentence_b
        }
    }
}

impl<'a> Iterator for Interleaved<'a> {
    type Item = &'a Sentence;

    fn next(&mut self) -> Option<Self::Item> {
        if self.front == self.back {
            return None;
        }
        let s = self.at(self.front);
        self.front += 1;
        Some(s)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.back - self.front;
        (n, Some(n))
    }
}

impl DoubleEndedIterator for Interleaved<'_> {
    fn next_back(&mut self) -> Option<Self::Item> {
        if self.front == self.back {
            return None;
        }
        self.back -= 1;
        Some(self.at(self.back))
    }
}

impl ExactSizeIterator for Interleaved<'_> {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_dialogues: usize,
    pub mean_turns: f64,
    pub mean_words: f64,
    pub vocab_size: usize,
}

/// A raw block: leading `#` metadata lines plus the parsed turns.
pub(crate) struct Block<'a> {
    pub first_line: usize,
    pub headers: Vec<(usize, &'a str)>,
    pub turns: Vec<DialogueTurn>,
}

pub(crate) fn parse_blocks(text: &str) -> Result<Vec<Block<'_>>> {
    let mut blocks = Vec::new();
    let mut current: Option<Block<'_>> = None;
    let mut pending_a: Option<(usize, Sentence)> = None;
    let mut blank_run = 0usize;
    let mut empty_block_line = 0usize;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);

        if line.trim().is_empty() {
            if let Some(block) = current.take() {
                if let Some((a_line, _)) = pending_a.take() {
                    return Err(Error::parse(a_line, "A line without a following B line"));
                }
                finish_block(block, &mut blocks)?;
            }
            blank_run += 1;
            // a second blank line in a row, or a blank line before any
            // block, opens an empty block
            if blank_run == 2 || (blank_run == 1 && blocks.is_empty()) {
                empty_block_line = line_no;
            }
            continue;
        }

        if empty_block_line > 0 {
            return Err(Error::parse(empty_block_line, "empty dialogue block"));
        }
        blank_run = 0;

        let block = current.get_or_insert_with(|| Block {
            first_line: line_no,
            headers: Vec::new(),
            turns: Vec::new(),
        });

        if let Some(meta) = line.strip_prefix('#') {
            if !block.turns.is_empty() || pending_a.is_some() {
                return Err(Error::parse(line_no, "metadata line inside a dialogue"));
            }
            block.headers.push((line_no, meta.trim()));
            continue;
        }

        let (speaker, rest) = split_speaker(line)
            .ok_or_else(|| Error::parse(line_no, format!("malformed speaker tag in {line:?}")))?;
        let sentence =
            Sentence::parse(rest).ok_or_else(|| Error::parse(line_no, "empty utterance"))?;

        match (speaker, pending_a.take()) {
            ('A', None) => pending_a = Some((line_no, sentence)),
            ('A', Some((a_line, _))) => {
                return Err(Error::parse(a_line, "A line without a following B line"));
            }
            ('B', Some((_, sentence_a))) => block.turns.push(DialogueTurn {
                sentence_a,
                sentence_b: sentence,
            }),
            ('B', None) => {
                return Err(Error::parse(line_no, "B line without a preceding A line"));
            }
            _ => unreachable!(),
        }
    }

    if let Some(block) = current.take() {
        if let Some((a_line, _)) = pending_a.take() {
            return Err(Error::parse(a_line, "A line without a following B line"));
        }
        finish_block(block, &mut blocks)?;
    }
    Ok(blocks)
}

fn finish_block<'a>(block: Block<'a>, blocks: &mut Vec<Block<'a>>) -> Result<()> {
    if block.turns.is_empty() {
        return Err(Error::parse(block.first_line, "empty dialogue block"));
    }
    blocks.push(block);
    Ok(())
}

fn split_speaker(line: &str) -> Option<(char, &str)> {
    if let Some(rest) = line.strip_prefix("A: ") {
        Some(('A', rest))
    } else {
        line.strip_prefix("B: ").map(|rest| ('B', rest))
    }
}

/// Parses a corpus. Dialogue ids are the zero-based block indices.
pub fn parse_corpus(text: &str) -> Result<Vec<Dialogue>> {
    Ok(parse_blocks(text)?
        .into_iter()
        .enumerate()
        .map(|(i, block)| Dialogue {
            id: i.to_string(),
            turns: block.turns,
        })
        .collect())
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Dialogue>> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    parse_corpus(&text)
}

pub(crate) fn write_turns(out: &mut String, turns: &[DialogueTurn]) {
    for turn in turns {
        out.push_str("A: ");
        out.push_str(&turn.sentence_a.to_string());
        out.push('\n');
        out.push_str("B: ");
        out.push_str(&turn.sentence_b.to_string());
        out.push('\n');
    }
}

/// Serializes dialogues back into the corpus format.
pub fn write_corpus(dialogues: &[Dialogue]) -> String {
    let mut out = String::new();
    for (i, d) in dialogues.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        write_turns(&mut out, &d.turns);
    }
    out
}

pub fn compute_stats(corpus: &[Dialogue]) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = corpus.len() as f64;
    let total_turns: usize = corpus.iter().map(Dialogue::num_turns).sum();
    let total_tokens: usize = corpus.iter().map(Dialogue::num_tokens).sum();
    let vocab: HashSet<&str> = corpus
        .iter()
        .flat_map(|d| d.sentences())
        .flat_map(|s| s.tokens().iter().map(String::as_str))
        .collect();
    Ok(CorpusStats {
        num_dialogues: corpus.len(),
        mean_turns: total_turns as f64 / n,
        mean_words: total_tokens as f64 / n,
        vocab_size: vocab.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE_TURN: &str = "A: hello what are doing today ?\n\
        B: i'm good , i just got off work and tired , i have two jobs .\n";

    #[test]
    fn parses_single_turn_block() {
        let corpus = parse_corpus(TABLE_TURN).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus[0].turns.len(), 1);
        let a = &corpus[0].turns[0].sentence_a;
        assert_eq!(a.tokens(), ["hello", "what", "are", "doing", "today", "?"]);
        assert_eq!(corpus[0].turns[0].sentence_b.len(), 16);
    }

    #[test]
    fn empty_stream_is_empty_corpus() {
        assert!(parse_corpus("").unwrap().is_empty());
    }

    #[test]
    fn blank_line_separates_blocks() {
        let text = "A: hi\nB: hello\n\nA: yo\nB: hey there\n";
        let corpus = parse_corpus(text).unwrap();
        assert_eq!(corpus.len(), 2);
        assert!(corpus.iter().all(|d| d.turns.len() == 1));
        assert_eq!(corpus[1].id, "1");
    }

    #[test]
    fn lowercases_tokens() {
        let corpus = parse_corpus("A: Do you like DOGS ?\nB: I have Two .").unwrap();
        assert_eq!(
            corpus[0].turns[0].sentence_a.tokens(),
            ["do", "you", "like", "dogs", "?"]
        );
    }

    #[test]
    fn crlf_line_endings() {
        let corpus = parse_corpus("A: hi\r\nB: hello\r\n").unwrap();
        assert_eq!(corpus[0].turns[0].sentence_b.tokens(), ["hello"]);
    }

    fn err_line(text: &str) -> (usize, String) {
        match parse_corpus(text) {
            Err(Error::Parse { line, message }) => (line, message),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_tag_reports_line() {
        let (line, msg) = err_line("A: hi\nB: hello\nC: what\nB: x\n");
        assert_eq!(line, 3);
        assert!(msg.contains("speaker tag"));
        let (line, _) = err_line("A:hi\nB: hello\n");
        assert_eq!(line, 1);
    }

    #[test]
    fn unpaired_a_line() {
        let (line, _) = err_line("A: hi\nB: hello\nA: dangling\n");
        assert_eq!(line, 3);
        let (line, _) = err_line("A: hi\nA: again\nB: x\n");
        assert_eq!(line, 1);
        let (line, _) = err_line("A: hi\n\nA: x\nB: y\n");
        assert_eq!(line, 1);
    }

    #[test]
    fn b_without_a() {
        let (line, _) = err_line("B: hello\n");
        assert_eq!(line, 1);
    }

    #[test]
    fn double_blank_line_is_empty_block() {
        let (line, msg) = err_line("A: hi\nB: hello\n\n\nA: x\nB: y\n");
        assert_eq!(line, 4);
        assert!(msg.contains("empty dialogue block"));
        let (line, _) = err_line("\nA: x\nB: y\n");
        assert_eq!(line, 1);
    }

    #[test]
    fn metadata_only_block_is_empty() {
        let (line, msg) = err_line("# just a header\n");
        assert_eq!(line, 1);
        assert!(msg.contains("empty dialogue block"));
    }

    #[test]
    fn trailing_blank_lines_tolerated() {
        assert_eq!(parse_corpus("A: x\nB: y\n\n").unwrap().len(), 1);
    }

    #[test]
    fn empty_utterance_rejected() {
        let (line, msg) = err_line("A: x\nB:  \n");
        assert_eq!(line, 2);
        assert!(msg.contains("empty utterance"));
    }

    #[test]
    fn stats_of_single_dialogue() {
        let mut text = String::new();
        for i in 0..8 {
            text.push_str(&format!("A: a{i} ?\nB: b{i} .\n"));
        }
        let stats = compute_stats(&parse_corpus(&text).unwrap()).unwrap();
        assert_eq!(stats.num_dialogues, 1);
        assert_eq!(stats.mean_turns, 8.0);
        assert_eq!(stats.mean_words, 32.0);
        // a0..a7, b0..b7, "?" and "."
        assert_eq!(stats.vocab_size, 18);
    }

    #[test]
    fn stats_of_empty_corpus_fails() {
        assert!(matches!(compute_stats(&[]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn interleaved_sentences() {
        let d = parse_corpus("A: a1\nB: b1\nA: a2\nB: b2\n").unwrap().remove(0);
        let fwd: Vec<String> = d.sentences().map(|s| s.to_string()).collect();
        assert_eq!(fwd, ["a1", "b1", "a2", "b2"]);
        let back: Vec<String> = d.sentences().rev().map(|s| s.to_string()).collect();
        assert_eq!(back, ["b2", "a2", "b1", "a1"]);
        assert_eq!(d.sentences().len(), 4);
    }
}
