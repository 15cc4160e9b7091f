//! Character-level corpus, vocabulary and deterministic batching.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Fraction of the token stream used for training; the tail is validation.
pub const TRAIN_FRACTION: f64 = 0.9;

/// How corpus bytes become characters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextMode {
    /// Strict UTF-8; invalid input is a data error.
    #[default]
    Utf8,
    /// Every byte is one symbol.
    Bytes,
}

/// A loaded corpus and its identity.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub text: String,
    /// Hex SHA-256 of the raw file bytes.
    pub sha256: String,
    pub bytes: usize,
}

impl Corpus {
    pub fn from_text(text: impl Into<String>) -> Self {
        let text = text.into();
        Corpus {
            sha256: hex_sha256(text.as_bytes()),
            bytes: text.len(),
            text,
        }
    }

    pub fn chars(&self) -> usize {
        self.text.chars().count()
    }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Reads a corpus and rejects it when it holds fewer than `10 * seq_len`
/// characters.
pub fn load_corpus(path: &Path, mode: TextMode, seq_len: usize) -> Result<Corpus> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let sha256 = hex_sha256(&raw);
    let bytes = raw.len();
    let text = match mode {
        TextMode::Utf8 => String::from_utf8(raw)
            .map_err(|e| Error::Data(format!("{}: not valid UTF-8: {e}", path.display())))?,
        TextMode::Bytes => raw.into_iter().map(char::from).collect(),
    };
    let corpus = Corpus {
        text,
        sha256,
        bytes,
    };
    let need = 10 * seq_len;
    if corpus.chars() < need {
        return Err(Error::Data(format!(
            "corpus too small: {} characters, need at least {need}",
            corpus.chars()
        )));
    }
    Ok(corpus)
}

/// Sorted character inventory plus a trailing unknown-symbol id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharVocab {
    chars: Vec<char>,
}

pub const UNK_CHAR: char = '\u{FFFD}';

impl CharVocab {
    pub fn build(text: &str) -> Self {
        let set: BTreeSet<char> = text.chars().collect();
        CharVocab {
            chars: set.into_iter().collect(),
        }
    }

    /// Number of ids including the unknown id.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn unk(&self) -> usize {
        self.chars.len()
    }

    pub fn symbols(&self) -> &[char] {
        &self.chars
    }

    pub fn id(&self, c: char) -> usize {
        self.chars.binary_search(&c).unwrap_or(self.unk())
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.id(c)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.chars.get(i).copied().unwrap_or(UNK_CHAR))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// One batch: `inputs` and `targets` are both `[batch, seq]` row-major and
/// `targets` is `inputs` shifted by one position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub batch: usize,
    pub seq: usize,
    /// Start of each window in the full token stream.
    pub offsets: Vec<usize>,
}

/// Encoded corpus with its contiguous train/validation split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: CharVocab,
    pub tokens: Vec<usize>,
    /// First validation token.
    pub split_at: usize,
    pub corpus_sha256: String,
}

impl Dataset {
    pub fn new(corpus: &Corpus) -> Self {
        let vocab = CharVocab::build(&corpus.text);
        let tokens = vocab.encode(&corpus.text);
        let split_at = (tokens.len() as f64 * TRAIN_FRACTION).floor() as usize;
        Dataset {
            vocab,
            tokens,
            split_at,
            corpus_sha256: corpus.sha256.clone(),
        }
    }

    /// Token range `[start, end)` of a split.
    pub fn range(&self, split: Split) -> (usize, usize) {
        match split {
            Split::Train => (0, self.split_at),
            Split::Val => (self.split_at, self.tokens.len()),
        }
    }

    fn check_room(&self, split: Split, batch: usize, seq: usize) -> Result<(usize, usize)> {
        let (start, end) = self.range(split);
        let need = batch * (seq + 1);
        if end - start < need.max(seq + 1) {
            return Err(Error::Data(format!(
                "{split:?} split has {} tokens, a [{batch} x {}] batch needs {need}",
                end - start,
                seq + 1
            )));
        }
        Ok((start, end))
    }

    fn window_batch(&self, offsets: Vec<usize>, seq: usize) -> Batch {
        let mut inputs = Vec::with_capacity(offsets.len() * seq);
        let mut targets = Vec::with_capacity(offsets.len() * seq);
        for &o in &offsets {
            inputs.extend_from_slice(&self.tokens[o..o + seq]);
            targets.extend_from_slice(&self.tokens[o + 1..o + seq + 1]);
        }
        Batch {
            inputs,
            targets,
            batch: offsets.len(),
            seq,
            offsets,
        }
    }

    /// Seeded stream of training batches with uniformly sampled windows.
    pub fn stream(&self, batch: usize, seq: usize, seed: u64) -> Result<BatchStream<'_>> {
        let (start, end) = self.check_room(Split::Train, batch, seq)?;
        Ok(BatchStream {
            data: self,
            batch,
            seq,
            start,
            last_start: end - (seq + 1),
            rng: ChaCha8Rng::seed_from_u64(seed),
            emitted: 0,
        })
    }

    /// Fixed validation batches: `count` batches of evenly spaced windows
    /// across the validation split.
    pub fn val_batches(&self, count: usize, batch: usize, seq: usize) -> Result<Vec<Batch>> {
        let (start, end) = self.check_room(Split::Val, batch, seq)?;
        let last_start = end - (seq + 1);
        let windows = count * batch;
        let span = last_start - start;
        Ok((0..count)
            .map(|b| {
                let offsets = (0..batch)
                    .map(|i| {
                        let w = b * batch + i;
                        start
                            + if windows > 1 {
                                w * span / (windows - 1)
                            } else {
                                0
                            }
                    })
                    .collect();
                self.window_batch(offsets, seq)
            })
            .collect())
    }
}

/// Deterministic training batch iterator.
#[derive(Clone, Debug)]
pub struct BatchStream<'a> {
    data: &'a Dataset,
    batch: usize,
    seq: usize,
    start: usize,
    last_start: usize,
    rng: ChaCha8Rng,
    emitted: u64,
}

impl BatchStream<'_> {
    pub fn emitted(&self) -> u64 {
        self.emitted
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let offsets = (0..self.batch)
            .map(|_| self.rng.random_range(self.start..=self.last_start))
            .collect();
        self.emitted += 1;
        Some(self.data.window_batch(offsets, self.seq))
    }
}
