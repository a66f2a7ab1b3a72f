//! Text normalization and the shared multilingual BPE tokenizer.
//!
//! One vocabulary serves every language. Merges are learned within
//! whitespace-delimited words only, so a term tokenizes the same way on its
//! own as it does inside a sentence; the space character itself is an
//! ordinary base symbol that never takes part in a merge.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const NUM_SPECIALS: usize = 4;

pub const DEFAULT_VOCAB_SIZE: usize = 8192;
pub const DEFAULT_MAX_LEN: usize = 128;

const WORD_BREAK: char = ' ';

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizerError {
    #[error("cannot train a tokenizer on an empty corpus")]
    EmptyCorpus,
    #[error("vocab size {requested} is below the {required} base symbols plus specials")]
    VocabTooSmall { required: usize, requested: usize },
    #[error("token id {0} is outside the vocabulary")]
    UnknownTokenId(u32),
    #[error("invalid tokenizer model: {0}")]
    InvalidModel(String),
}

/// Unicode NFC, lowercase, whitespace runs collapsed to one space, control
/// characters dropped, ends trimmed.
pub fn normalize(text: &str) -> String {
    let lowered: String = text.nfc().flat_map(char::to_lowercase).collect();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_space = false;
    for c in lowered.nfc() {
        if c.is_whitespace() {
            pending_space = true;
        } else if c.is_control() {
            continue;
        } else {
            if pending_space && !out.is_empty() {
                out.push(WORD_BREAK);
            }
            pending_space = false;
            out.push(c);
        }
    }
    out
}

/// Token ids plus a parallel flag marking non-special positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub content_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn from_ids(ids: Vec<u32>) -> Self {
        let content_mask = ids.iter().map(|&id| !matches!(id, PAD | BOS | EOS)).collect();
        Self { ids, content_mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn content_len(&self) -> usize {
        self.content_mask.iter().filter(|&&m| m).count()
    }

    /// Right-pads with PAD up to `len` (no-op if already that long).
    pub fn padded(&self, len: usize) -> Self {
        let mut ids = self.ids.clone();
        if ids.len() < len {
            ids.resize(len, PAD);
        }
        Self::from_ids(ids)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizerModel {
    alphabet: Vec<char>,
    merges: Vec<(String, String)>,
    /// id -> surface form; specials map to the empty string.
    symbols: Vec<String>,
    vocab: BTreeMap<String, u32>,
    /// (left, right, output) ids, in training order.
    compiled: Vec<(u32, u32, u32)>,
}

impl TokenizerModel {
    /// Rebuilds a model from its serialized parts, assigning ids the same
    /// way training does: specials, then the alphabet in order, then every
    /// merge whose output symbol is new.
    pub fn from_parts(alphabet: Vec<char>, merges: Vec<(String, String)>) -> Result<Self, TokenizerError> {
        let mut symbols: Vec<String> = (0..NUM_SPECIALS).map(|_| String::new()).collect();
        let mut vocab = BTreeMap::new();
        for &c in &alphabet {
            let s = String::from(c);
            if vocab.insert(s.clone(), symbols.len() as u32).is_some() {
                return Err(TokenizerError::InvalidModel(alloc::format!("duplicate alphabet symbol {c:?}")));
            }
            symbols.push(s);
        }
        let mut compiled = Vec::with_capacity(merges.len());
        for (left, right) in &merges {
            let (Some(&l), Some(&r)) = (vocab.get(left), vocab.get(right)) else {
                return Err(TokenizerError::InvalidModel(alloc::format!(
                    "merge ({left:?}, {right:?}) uses a symbol that is not yet defined"
                )));
            };
            if left.contains(WORD_BREAK) || right.contains(WORD_BREAK) {
                return Err(TokenizerError::InvalidModel("merges may not span a word break".into()));
            }
            let mut joined = left.clone();
            joined.push_str(right);
            let out = match vocab.get(&joined) {
                Some(&id) => id,
                None => {
                    let id = symbols.len() as u32;
                    vocab.insert(joined.clone(), id);
                    symbols.push(joined);
                    id
                }
            };
            compiled.push((l, r, out));
        }
        Ok(Self { alphabet, merges, symbols, vocab, compiled })
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn vocab_size(&self) -> usize {
        self.symbols.len()
    }

    pub fn token_id(&self, symbol: &str) -> Option<u32> {
        self.vocab.get(symbol).copied()
    }

    /// Surface form of a non-special id.
    pub fn symbol(&self, id: u32) -> Option<&str> {
        match id as usize {
            i if i < NUM_SPECIALS => None,
            i => self.symbols.get(i).map(String::as_str),
        }
    }

    fn base_id(&self, c: char) -> u32 {
        let mut buf = [0u8; 4];
        self.vocab.get(c.encode_utf8(&mut buf) as &str).copied().unwrap_or(UNK)
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let mut ids: Vec<u32> = word.chars().map(|c| self.base_id(c)).collect();
        for &(l, r, merged) in &self.compiled {
            if ids.len() < 2 {
                break;
            }
            apply_merge(&mut ids, l, r, merged);
        }
        out.extend_from_slice(&ids);
    }

    /// Normalizes, tokenizes and wraps with BOS/EOS. Content beyond
    /// `max_len - 2` tokens is dropped; EOS is always kept.
    pub fn encode(&self, text: &str, max_len: usize) -> TokenSequence {
        assert!(max_len >= 2, "max_len must leave room for BOS and EOS");
        let text = normalize(text);
        let mut content = Vec::new();
        let mut first = true;
        for word in text.split(WORD_BREAK) {
            if !first {
                content.push(self.base_id(WORD_BREAK));
            }
            first = false;
            self.encode_word(word, &mut content);
        }
        content.truncate(max_len - 2);
        let mut ids = Vec::with_capacity(content.len() + 2);
        ids.push(BOS);
        ids.extend(content);
        ids.push(EOS);
        TokenSequence::from_ids(ids)
    }

    pub fn decode(&self, seq: &TokenSequence) -> Result<String, TokenizerError> {
        let mut out = String::new();
        for &id in &seq.ids {
            match id {
                PAD | BOS | EOS => {}
                UNK => out.push(char::REPLACEMENT_CHARACTER),
                _ => out.push_str(self.symbol(id).ok_or(TokenizerError::UnknownTokenId(id))?),
            }
        }
        Ok(out)
    }
}

fn apply_merge(ids: &mut Vec<u32>, left: u32, right: u32, merged: u32) {
    let mut write = 0;
    let mut read = 0;
    while read < ids.len() {
        if read + 1 < ids.len() && ids[read] == left && ids[read + 1] == right {
            ids[write] = merged;
            read += 2;
        } else {
            ids[write] = ids[read];
            read += 1;
        }
        write += 1;
    }
    ids.truncate(write);
}

/// Greedy byte-pair-encoding training over normalized strings.
///
/// Repeatedly merges the most frequent adjacent symbol pair inside words;
/// ties go to the lexicographically smallest `(left, right)`. Stops once the
/// vocabulary reaches `vocab_size` or no pair occurs at least twice.
///
/// `seed` is accepted for interface stability and does not influence the
/// result.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], vocab_size: usize, _seed: u64) -> Result<TokenizerModel, TokenizerError> {
    if corpus.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut alphabet: Vec<char> = corpus.iter().flat_map(|s| s.as_ref().chars()).collect();
    alphabet.sort_unstable();
    alphabet.dedup();
    let required = alphabet.len() + NUM_SPECIALS;
    if vocab_size < required {
        return Err(TokenizerError::VocabTooSmall { required, requested: vocab_size });
    }

    let mut word_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for text in corpus {
        for word in text.as_ref().split(WORD_BREAK).filter(|w| !w.is_empty()) {
            *word_counts.entry(word).or_insert(0) += 1;
        }
    }

    let mut model = TokenizerModel::from_parts(alphabet, Vec::new())?;
    let mut words: Vec<(Vec<u32>, u64)> = word_counts
        .into_iter()
        .map(|(w, n)| (w.chars().map(|c| model.base_id(c)).collect(), n))
        .collect();

    while model.vocab_size() < vocab_size {
        let mut pair_counts: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for (ids, n) in &words {
            for w in ids.windows(2) {
                *pair_counts.entry((w[0], w[1])).or_insert(0) += n;
            }
        }
        let mut best: Option<((u32, u32), u64)> = None;
        for (&pair, &count) in &pair_counts {
            let better = match best {
                None => true,
                Some((bp, bc)) => {
                    count > bc
                        || (count == bc
                            && (model.symbols[pair.0 as usize].as_str(), model.symbols[pair.1 as usize].as_str())
                                < (model.symbols[bp.0 as usize].as_str(), model.symbols[bp.1 as usize].as_str()))
                }
            };
            if better {
                best = Some((pair, count));
            }
        }
        let Some(((l, r), count)) = best else { break };
        if count < 2 {
            break;
        }
        let left = model.symbols[l as usize].clone();
        let right = model.symbols[r as usize].clone();
        let mut joined = left.clone();
        joined.push_str(&right);
        let merged = match model.vocab.get(&joined) {
            Some(&id) => id,
            None => {
                let id = model.symbols.len() as u32;
                model.vocab.insert(joined.clone(), id);
                model.symbols.push(joined);
                id
            }
        };
        model.merges.push((left, right));
        model.compiled.push((l, r, merged));
        for (ids, _) in &mut words {
            apply_merge(ids, l, r, merged);
        }
    }
    Ok(model)
}
