//! Pretrained word vectors and mean-vector dialogue histories.

use std::borrow::Cow;
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::noise::ScoredDialogue;

/// Word vectors of a fixed dimensionality, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Inserts a vector unless the token is already present. Returns whether
    /// the vector was stored.
    pub fn insert(&mut self, token: &str, vector: &[f64]) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector for {token:?} has {} components, table dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding for {token:?}")));
        }
        if self.index.contains_key(token) {
            return Ok(false);
        }
        self.index.insert(token.to_string(), self.index.len());
        self.data.extend_from_slice(vector);
        Ok(true)
    }

    pub fn get(&self, token: &str) -> Option<ArrayView1<'_, f64>> {
        self.index.get(token).map(|&row| {
            ArrayView1::from(&self.data[row * self.dim..(row + 1) * self.dim])
        })
    }

    /// Writes the table in the embedding text format, rows in insertion order.
    pub fn write_text(&self, mut out: impl Write) -> std::io::Result<()> {
        let mut rows: Vec<(&String, &usize)> = self.index.iter().collect();
        rows.sort_by_key(|(_, &row)| row);
        for (token, &row) in rows {
            write!(out, "{token}")?;
            for v in &self.data[row * self.dim..(row + 1) * self.dim] {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Reads `token v1 v2 ...` lines, keeping the first `dim` components of each
/// vector. When `vocab` is given, tokens outside it are skipped.
///
/// Lines with more fields than the first line are taken as multi-word tokens
/// (the leading extra fields belong to the token).
pub fn read_embeddings(
    reader: impl BufRead,
    dim: usize,
    vocab: Option<&HashSet<String>>,
) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(dim);
    let mut stored_dim: Option<usize> = None;
    let mut buf = Vec::with_capacity(dim);

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        let width = *stored_dim.get_or_insert(fields.len().saturating_sub(1));
        if width < dim || width == 0 {
            return Err(Error::parse(
                line_no,
                format!("vectors have {width} components, need at least {dim}"),
            ));
        }
        if fields.len() < width + 1 {
            return Err(Error::parse(
                line_no,
                format!("expected {} fields, found {}", width + 1, fields.len()),
            ));
        }
        let split = fields.len() - width;
        let token = fields[..split].join(" ");
        if vocab.is_some_and(|v| !v.contains(&token)) {
            continue;
        }
        buf.clear();
        for field in &fields[split..split + dim] {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(line_no, format!("non-numeric field {field:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(line_no, format!("non-finite field {field:?}")));
            }
            buf.push(v);
        }
        // the remaining components must still be numbers
        if let Some(bad) = fields[split + dim..].iter().find(|f| f.parse::<f64>().is_err()) {
            return Err(Error::parse(line_no, format!("non-numeric field {bad:?}")));
        }
        table.insert(&token, &buf)?;
    }
    Ok(table)
}

pub fn load_embeddings(
    path: impl AsRef<Path>,
    dim: usize,
    vocab: Option<&HashSet<String>>,
) -> Result<EmbeddingTable> {
    read_embeddings(BufReader::new(File::open(path)?), dim, vocab)
}

/// Mean of the in-vocabulary token vectors; zero when none are known.
pub fn sentence_vector(sentence: &Sentence, table: &EmbeddingTable) -> Array1<f64> {
    let mut sum = Array1::zeros(table.dim());
    let mut known = 0usize;
    for token in sentence.tokens() {
        if let Some(v) = table.get(token) {
            sum += &v;
            known += 1;
        }
    }
    if known > 0 {
        sum /= known as f64;
    }
    sum
}

/// Which end of the dialogue the history window is aligned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Last,
    First,
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(Window::Last),
            "first" => Ok(Window::First),
            other => Err(Error::Config(format!("unknown window {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub source_id: String,
    pub noise_level: usize,
}

/// `L` sentence vectors (one per row, oldest first) and the reward target.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub vectors: Array2<f64>,
    pub target: f64,
    pub meta: FeatureMeta,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Maps a scored dialogue to `history` sentence vectors. Short dialogues are
/// front-padded with zero rows so the last row is always the newest sentence.
pub fn featurize(
    d: &ScoredDialogue,
    history: usize,
    table: &EmbeddingTable,
    window: Window,
) -> FeatureSequence {
    let sentences: Vec<&Sentence> = d.dialogue.sentences().collect();
    let take = history.min(sentences.len());
    let chosen = match window {
        Window::Last => &sentences[sentences.len() - take..],
        Window::First => &sentences[..take],
    };
    let mut vectors = Array2::zeros((history, table.dim()));
    let pad = history - take;
    for (row, s) in chosen.iter().enumerate() {
        vectors.row_mut(pad + row).assign(&sentence_vector(s, table));
    }
    FeatureSequence {
        vectors,
        target: d.score as f64,
        meta: FeatureMeta {
            source_id: d.source_id.clone(),
            noise_level: d.noise_level,
        },
    }
}

pub fn featurize_all(
    dataset: &[ScoredDialogue],
    history: usize,
    table: &EmbeddingTable,
    window: Window,
) -> Vec<FeatureSequence> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        dataset
            .par_iter()
            .map(|d| featurize(d, history, table, window))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        dataset
            .iter()
            .map(|d| featurize(d, history, table, window))
            .collect()
    }
}

/// Indexed access to feature sequences of one history length.
pub trait SequenceSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dim(&self) -> usize;

    fn target(&self, index: usize) -> f64;

    fn get(&self, index: usize) -> Cow<'_, FeatureSequence>;
}

impl SequenceSource for [FeatureSequence] {
    fn len(&self) -> usize {
        <[FeatureSequence]>::len(self)
    }

    fn dim(&self) -> usize {
        self.first().map_or(0, FeatureSequence::dim)
    }

    fn target(&self, index: usize) -> f64 {
        self[index].target
    }

    fn get(&self, index: usize) -> Cow<'_, FeatureSequence> {
        Cow::Borrowed(&self[index])
    }
}

impl SequenceSource for Vec<FeatureSequence> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn dim(&self) -> usize {
        SequenceSource::dim(self.as_slice())
    }

    fn target(&self, index: usize) -> f64 {
        self[index].target
    }

    fn get(&self, index: usize) -> Cow<'_, FeatureSequence> {
        Cow::Borrowed(&self[index])
    }
}

/// Featurizes scored dialogues on demand, so full-size datasets never hold
/// every `L x dim` matrix in memory at once.
#[derive(Clone, Copy)]
pub struct LazyFeatures<'a> {
    pub dialogues: &'a [ScoredDialogue],
    pub table: &'a EmbeddingTable,
    pub history: usize,
    pub window: Window,
}

impl SequenceSource for LazyFeatures<'_> {
    fn len(&self) -> usize {
        self.dialogues.len()
    }

    fn dim(&self) -> usize {
        self.table.dim()
    }

    fn target(&self, index: usize) -> f64 {
        self.dialogues[index].score as f64
    }

    fn get(&self, index: usize) -> Cow<'_, FeatureSequence> {
        Cow::Owned(featurize(
            &self.dialogues[index],
            self.history,
            self.table,
            self.window,
        ))
    }
}

/// A view of selected rows of another source.
pub struct Subset<'a, S: ?Sized> {
    pub source: &'a S,
    pub indices: &'a [usize],
}

impl<S: SequenceSource + ?Sized> SequenceSource for Subset<'_, S> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn dim(&self) -> usize {
        self.source.dim()
    }

    fn target(&self, index: usize) -> f64 {
        self.source.target(self.indices[index])
    }

    fn get(&self, index: usize) -> Cow<'_, FeatureSequence> {
        self.source.get(self.indices[index])
    }
}

/// Every token occurring in a set of scored dialogues.
pub fn vocabulary<'a>(dialogues: impl IntoIterator<Item = &'a ScoredDialogue>) -> HashSet<String> {
    dialogues
        .into_iter()
        .flat_map(|d| d.dialogue.sentences())
        .flat_map(|s| s.tokens().iter().cloned())
        .collect()
}

const CACHE_MAGIC: &[u8; 8] = b"DRFEAT\0\x01";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub version: u32,
    pub history_length: usize,
    pub dim: usize,
    pub count: usize,
    pub window: Window,
}

/// Binary feature cache: magic, length-prefixed JSON header, then one record
/// per sequence (`u32` source length, source bytes, `u32` noise, `f64`
/// target, `L * dim` `f64`s row-major). All integers and floats little-endian.
pub fn write_feature_cache(
    mut out: impl Write,
    features: &[FeatureSequence],
    history: usize,
    dim: usize,
    window: Window,
) -> Result<()> {
    let header = CacheHeader {
        version: 1,
        history_length: history,
        dim,
        count: features.len(),
        window,
    };
    let header = serde_json::to_vec(&header)?;
    out.write_all(CACHE_MAGIC)?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    for f in features {
        if f.vectors.dim() != (history, dim) {
            return Err(Error::Shape(format!(
                "feature sequence is {:?}, cache expects ({history}, {dim})",
                f.vectors.dim()
            )));
        }
        let source = f.meta.source_id.as_bytes();
        out.write_all(&(source.len() as u32).to_le_bytes())?;
        out.write_all(source)?;
        out.write_all(&(f.meta.noise_level as u32).to_le_bytes())?;
        out.write_all(&f.target.to_le_bytes())?;
        for v in f.vectors.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_feature_cache(mut input: impl Read) -> Result<(CacheHeader, Vec<FeatureSequence>)> {
    let bad = |m: &str| Error::Checkpoint(format!("feature cache: {m}"));
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(bad("bad magic"));
    }
    let header_len = read_u32(&mut input)? as usize;
    let mut header = vec![0u8; header_len];
    input.read_exact(&mut header)?;
    let header: CacheHeader = serde_json::from_slice(&header)?;
    if header.version != 1 {
        return Err(bad("unsupported version"));
    }
    let mut features = Vec::with_capacity(header.count);
    for _ in 0..header.count {
        let len = read_u32(&mut input)? as usize;
        let mut source = vec![0u8; len];
        input.read_exact(&mut source)?;
        let source_id = String::from_utf8(source).map_err(|_| bad("source id is not utf-8"))?;
        let noise_level = read_u32(&mut input)? as usize;
        let target = read_f64(&mut input)?;
        let mut values = Vec::with_capacity(header.history_length * header.dim);
        for _ in 0..header.history_length * header.dim {
            values.push(read_f64(&mut input)?);
        }
        let vectors = Array2::from_shape_vec((header.history_length, header.dim), values)
            .map_err(|e| bad(&e.to_string()))?;
        features.push(FeatureSequence {
            vectors,
            target,
            meta: FeatureMeta {
                source_id,
                noise_level,
            },
        });
    }
    Ok((header, features))
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(input: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_corpus;
    use ndarray::array;

    fn table2(entries: &[(&str, [f64; 2])]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(2);
        for (tok, v) in entries {
            t.insert(tok, v).unwrap();
        }
        t
    }

    fn scored(text: &str) -> ScoredDialogue {
        let dialogue = parse_corpus(text).unwrap().remove(0);
        ScoredDialogue {
            score: dialogue.num_turns() as i64,
            noise_level: 0,
            source_id: dialogue.id.clone(),
            dialogue,
        }
    }

    #[test]
    fn prefix_truncation() {
        let t = read_embeddings("hello 0.1 0.2 0.3\n".as_bytes(), 2, None).unwrap();
        assert_eq!(t.get("hello").unwrap(), array![0.1, 0.2]);
    }

    #[test]
    fn empty_file_gives_empty_table() {
        let t = read_embeddings("".as_bytes(), 100, None).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.dim(), 100);
        assert!(t.get("hello").is_none());
    }

    #[test]
    fn duplicate_keeps_first() {
        let t = read_embeddings("a 1 2\nb 3 4\na 5 6\n".as_bytes(), 2, None).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("a").unwrap(), array![1.0, 2.0]);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = read_embeddings("a 1 2\nb 3 x\n".as_bytes(), 2, None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = read_embeddings("a 1 2\nb 3\n".as_bytes(), 2, None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        // a non-numeric tail component is still an error
        let err = read_embeddings("a 1 2 3\nb 3 4 z\n".as_bytes(), 2, None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        // asking for more components than stored
        let err = read_embeddings("a 1 2\n".as_bytes(), 3, None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = read_embeddings("a 1 nan\n".as_bytes(), 2, None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn multiword_tokens_and_vocab_filter() {
        let text = "a 1 2\n. . . 3 4\nb 5 6\n";
        let t = read_embeddings(text.as_bytes(), 2, None).unwrap();
        assert_eq!(t.get(". . .").unwrap(), array![3.0, 4.0]);
        let vocab: HashSet<String> = ["b".to_string()].into();
        let t = read_embeddings(text.as_bytes(), 2, Some(&vocab)).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.get("a").is_none());
    }

    #[test]
    fn text_round_trip() {
        let t = table2(&[("x", [0.25, -1.5]), ("y", [3.0, 1e-7])]);
        let mut buf = Vec::new();
        t.write_text(&mut buf).unwrap();
        assert_eq!(read_embeddings(&buf[..], 2, None).unwrap(), t);
    }

    #[test]
    fn two_point_mean() {
        let t = table2(&[("u", [1.0, 0.0]), ("v", [0.0, 1.0])]);
        let s = Sentence::from_tokens(["u", "v"]);
        assert_eq!(sentence_vector(&s, &t), array![0.5, 0.5]);
    }

    #[test]
    fn repeated_token_mean() {
        let t = table2(&[("w", [0.3, -0.7])]);
        let s = Sentence::from_tokens(["w"; 5]);
        assert_eq!(sentence_vector(&s, &t), array![0.3, -0.7]);
    }

    #[test]
    fn oov_is_skipped_and_all_oov_is_zero() {
        let t = table2(&[("u", [2.0, 4.0])]);
        let s = Sentence::from_tokens(["u", "zzz"]);
        assert_eq!(sentence_vector(&s, &t), array![2.0, 4.0]);
        let s = Sentence::from_tokens(["qq", "zzz"]);
        assert_eq!(sentence_vector(&s, &t), array![0.0, 0.0]);
        assert_eq!(sentence_vector(&Sentence::from_tokens::<_, &str>([]), &t), array![0.0, 0.0]);
    }

    /// Dialogue whose k-th sentence (1-based) is the single token `s{k}`, with
    /// a table mapping `s{k}` to `(k, -k)`.
    fn numbered(turns: usize) -> (ScoredDialogue, EmbeddingTable) {
        let mut text = String::new();
        let mut t = EmbeddingTable::new(2);
        for j in 0..turns {
            let (a, b) = (2 * j + 1, 2 * j + 2);
            text.push_str(&format!("A: s{a}\nB: s{b}\n"));
            t.insert(&format!("s{a}"), &[a as f64, -(a as f64)]).unwrap();
            t.insert(&format!("s{b}"), &[b as f64, -(b as f64)]).unwrap();
        }
        (scored(&text), t)
    }

    #[test]
    fn last_window_takes_trailing_sentences() {
        let (d, t) = numbered(8);
        let f = featurize(&d, 10, &t, Window::Last);
        assert_eq!(f.vectors.dim(), (10, 2));
        let firsts: Vec<f64> = f.vectors.column(0).to_vec();
        assert_eq!(firsts, (7..=16).map(f64::from).collect::<Vec<_>>());
        assert_eq!(f.target, 8.0);
    }

    #[test]
    fn short_dialogue_is_front_padded() {
        let (d, t) = numbered(2);
        let f = featurize(&d, 10, &t, Window::Last);
        let firsts: Vec<f64> = f.vectors.column(0).to_vec();
        assert_eq!(firsts, [0., 0., 0., 0., 0., 0., 1., 2., 3., 4.]);
    }

    #[test]
    fn single_step_is_final_b_sentence() {
        let (d, t) = numbered(5);
        let f = featurize(&d, 1, &t, Window::Last);
        assert_eq!(f.vectors.row(0), array![10.0, -10.0]);
    }

    #[test]
    fn first_window() {
        let (d, t) = numbered(8);
        let f = featurize(&d, 3, &t, Window::First);
        assert_eq!(f.vectors.column(0).to_vec(), [1.0, 2.0, 3.0]);
    }

    #[test]
    fn cache_round_trip() {
        let (d, t) = numbered(3);
        let feats = vec![
            featurize(&d, 4, &t, Window::Last),
            featurize(&d, 4, &t, Window::Last),
        ];
        let mut buf = Vec::new();
        write_feature_cache(&mut buf, &feats, 4, 2, Window::Last).unwrap();
        let (header, back) = read_feature_cache(&buf[..]).unwrap();
        assert_eq!(header.count, 2);
        assert_eq!(back, feats);
        buf[0] = b'X';
        assert!(read_feature_cache(&buf[..]).is_err());
    }
}
