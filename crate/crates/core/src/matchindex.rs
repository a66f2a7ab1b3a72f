//! Embedding store with exact cosine top-k and structured filters.
//!
//! Filters are hard constraints applied before scoring. Results are ordered
//! by descending cosine, ties by ascending doc id, so pagination is stable.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, DocumentKind};
use crate::encoder::{cosine, EncoderError};
use crate::textprep::TokenizerModel;
use crate::training::Checkpoint;

const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("no documents to index")]
    EmptyInput,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("stored vector for {0:?} is neither unit length nor zero")]
    NotNormalized(String),
    #[error("checkpoint vocab {checkpoint} does not match tokenizer vocab {tokenizer}")]
    VocabMismatch { checkpoint: usize, tokenizer: usize },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub doc_id: String,
    pub kind: DocumentKind,
    pub language: String,
    pub fields: BTreeMap<String, String>,
    pub vector: Vec<f32>,
    /// The document embedded to (numerically) zero; its vector is all zeros.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dimension: usize,
    generation: u64,
    entries: Vec<IndexEntry>,
}

fn unit_normalize(v: &[f32]) -> (Vec<f32>, bool) {
    let norm = libm::sqrt(v.iter().map(|&x| x as f64 * x as f64).sum::<f64>());
    if norm < 1e-12 {
        return (alloc::vec![0.0; v.len()], true);
    }
    (v.iter().map(|&x| (x as f64 / norm) as f32).collect(), false)
}

impl EmbeddingIndex {
    pub fn empty(dimension: usize, generation: u64) -> Self {
        Self { dimension, generation, entries: Vec::new() }
    }

    /// Validates ids, dimensions and normalization of prepared entries.
    pub fn from_entries(dimension: usize, generation: u64, entries: Vec<IndexEntry>) -> Result<Self, IndexError> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if e.vector.len() != dimension {
                return Err(IndexError::DimensionMismatch { expected: dimension, got: e.vector.len() });
            }
            if !seen.insert(e.doc_id.as_str()) {
                return Err(IndexError::DuplicateId(e.doc_id.clone()));
            }
            let norm = libm::sqrt(e.vector.iter().map(|&x| x as f64 * x as f64).sum::<f64>());
            let ok = if e.degenerate { norm == 0.0 } else { libm::fabs(norm - 1.0) <= UNIT_TOLERANCE };
            if !ok {
                return Err(IndexError::NotNormalized(e.doc_id.clone()));
            }
        }
        Ok(Self { dimension, generation, entries })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn with_generation(mut self, generation: u64) -> Self {
        self.generation = generation;
        self
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| e.doc_id == doc_id)
    }
}

/// Hard constraints on index entries. The default filter matches everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Filter {
    /// Every listed field must be present with exactly this value.
    pub fields: BTreeMap<String, String>,
    /// When set, the entry language must be one of these.
    pub languages: Option<BTreeSet<String>>,
    pub kind: Option<DocumentKind>,
}

impl Filter {
    pub fn with_field(mut self, key: &str, value: &str) -> Self {
        self.fields.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with_languages<I: IntoIterator<Item = S>, S: Into<String>>(mut self, langs: I) -> Self {
        self.languages = Some(langs.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_kind(mut self, kind: DocumentKind) -> Self {
        self.kind = Some(kind);
        self
    }

    pub fn matches(&self, entry: &IndexEntry) -> bool {
        self.kind.is_none_or(|k| k == entry.kind)
            && self.languages.as_ref().is_none_or(|l| l.contains(&entry.language))
            && self.fields.iter().all(|(k, v)| entry.fields.get(k) == Some(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Heap element ordered so that the *worst* candidate is the maximum.
struct Ranked<'a> {
    score: f64,
    id: &'a str,
}

impl Ord for Ranked<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other.score.total_cmp(&self.score).then_with(|| self.id.cmp(other.id))
    }
}

impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked<'_> {}

/// Exact search over the entries passing `filter`.
pub fn top_k(index: &EmbeddingIndex, query: &[f32], k: usize, filter: &Filter) -> Result<Vec<Match>, IndexError> {
    if query.len() != index.dimension {
        return Err(IndexError::DimensionMismatch { expected: index.dimension, got: query.len() });
    }
    if k == 0 {
        return Err(IndexError::InvalidK);
    }
    let mut heap: BinaryHeap<Ranked<'_>> = BinaryHeap::with_capacity(k.min(index.entries.len()) + 1);
    for e in index.entries.iter().filter(|e| filter.matches(e)) {
        let candidate = Ranked { score: cosine(query, &e.vector)?.value, id: &e.doc_id };
        if heap.len() < k {
            heap.push(candidate);
        } else if let Some(worst) = heap.peek() {
            if candidate < *worst {
                heap.pop();
                heap.push(candidate);
            }
        }
    }
    Ok(heap
        .into_sorted_vec()
        .into_iter()
        .enumerate()
        .map(|(i, r)| Match { doc_id: r.id.to_string(), score: r.score, rank: i + 1 })
        .collect())
}

/// Embeds and unit-normalizes every document.
pub fn build_index(
    documents: &[Document],
    checkpoint: &Checkpoint,
    tokenizer: &TokenizerModel,
    generation: u64,
) -> Result<EmbeddingIndex, IndexError> {
    if documents.is_empty() {
        return Err(IndexError::EmptyInput);
    }
    if checkpoint.config.vocab_size != tokenizer.vocab_size() {
        return Err(IndexError::VocabMismatch { checkpoint: checkpoint.config.vocab_size, tokenizer: tokenizer.vocab_size() });
    }
    let mut seen = BTreeSet::new();
    for d in documents {
        if !seen.insert(d.id.as_str()) {
            return Err(IndexError::DuplicateId(d.id.clone()));
        }
    }
    let texts: Vec<&str> = documents.iter().map(|d| d.text.as_str()).collect();
    let vectors = checkpoint.embed_texts(tokenizer, &texts)?;
    let entries = documents
        .iter()
        .zip(vectors)
        .map(|(d, v)| {
            let (vector, degenerate) = unit_normalize(&v);
            IndexEntry {
                doc_id: d.id.clone(),
                kind: d.kind,
                language: d.language.clone(),
                fields: d.fields.clone(),
                vector,
                degenerate,
            }
        })
        .collect();
    EmbeddingIndex::from_entries(checkpoint.config.d_model, generation, entries)
}

/// Ranks the index's CVs for a vacancy text.
pub fn recommend(
    index: &EmbeddingIndex,
    vacancy_text: &str,
    tokenizer: &TokenizerModel,
    checkpoint: &Checkpoint,
    k: usize,
    filter: &Filter,
) -> Result<Vec<Match>, IndexError> {
    if k == 0 {
        return Err(IndexError::InvalidK);
    }
    if index.is_empty() {
        return Ok(Vec::new());
    }
    let query = checkpoint.embed(tokenizer, vacancy_text)?;
    let filter = filter.clone().with_kind(DocumentKind::Cv);
    top_k(index, &query, k, &filter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::textprep::train_bpe;
    use alloc::format;
    use alloc::vec;

    fn entry(id: &str, v: Vec<f32>, lang: &str, loc: &str) -> IndexEntry {
        let (vector, degenerate) = unit_normalize(&v);
        let mut fields = BTreeMap::new();
        fields.insert("location".to_string(), loc.to_string());
        IndexEntry { doc_id: id.into(), kind: DocumentKind::Cv, language: lang.into(), fields, vector, degenerate }
    }

    fn small_index() -> EmbeddingIndex {
        EmbeddingIndex::from_entries(
            2,
            1,
            vec![
                entry("b", vec![1.0, 0.0], "nl", "utrecht"),
                entry("a", vec![2.0, 0.0], "en", "utrecht"),
                entry("c", vec![0.0, 1.0], "nl", "amsterdam"),
                entry("z", vec![0.0, 0.0], "nl", "amsterdam"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn ordering_ties_and_truncation() {
        let idx = small_index();
        let all = top_k(&idx, &[1.0, 0.0], 10, &Filter::default()).unwrap();
        let ids: Vec<&str> = all.iter().map(|m| m.doc_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c", "z"]);
        assert_eq!(all.iter().map(|m| m.rank).collect::<Vec<_>>(), [1, 2, 3, 4]);
        let one = top_k(&idx, &[1.0, 0.0], 1, &Filter::default()).unwrap();
        assert_eq!(one[0].doc_id, "a");
        assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn filters() {
        let idx = small_index();
        let f = Filter::default().with_field("location", "amsterdam");
        let got = top_k(&idx, &[1.0, 0.0], 10, &f).unwrap();
        assert_eq!(got.len(), 2);
        let f = Filter::default().with_languages(["en"]);
        assert_eq!(top_k(&idx, &[1.0, 0.0], 10, &f).unwrap()[0].doc_id, "a");
        let none = Filter::default().with_field("location", "nowhere");
        assert!(top_k(&idx, &[1.0, 0.0], 10, &none).unwrap().is_empty());
        assert!(top_k(&idx, &[1.0, 0.0], 10, &Filter::default().with_kind(DocumentKind::Vacancy)).unwrap().is_empty());
    }

    #[test]
    fn index_errors() {
        let idx = small_index();
        assert_eq!(
            top_k(&idx, &[1.0], 1, &Filter::default()),
            Err(IndexError::DimensionMismatch { expected: 2, got: 1 })
        );
        assert_eq!(top_k(&idx, &[1.0, 0.0], 0, &Filter::default()), Err(IndexError::InvalidK));
        let dup = vec![entry("a", vec![1.0, 0.0], "nl", "x"), entry("a", vec![0.0, 1.0], "nl", "x")];
        assert_eq!(EmbeddingIndex::from_entries(2, 0, dup), Err(IndexError::DuplicateId("a".into())));
        let mut raw = entry("q", vec![1.0, 0.0], "nl", "x");
        raw.vector = vec![2.0, 0.0];
        assert!(matches!(EmbeddingIndex::from_entries(2, 0, vec![raw]), Err(IndexError::NotNormalized(_))));
    }

    fn model() -> (TokenizerModel, Checkpoint) {
        let corpus = ["i have 3 years of experience as a tutor", "we are looking for a talented instructor"];
        let tok = train_bpe(&corpus, 200, 0).unwrap();
        let cfg = EncoderConfig { vocab_size: tok.vocab_size(), d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, max_len: 64 };
        (tok, Checkpoint::init(cfg, 3).unwrap())
    }

    fn cv(id: &str, text: &str) -> Document {
        Document { id: id.into(), kind: DocumentKind::Cv, language: "en".into(), text: text.into(), fields: BTreeMap::new() }
    }

    #[test]
    fn build_and_recommend() {
        let (tok, ck) = model();
        let docs = vec![
            cv("c1", "i have 3 years of experience as a tutor"),
            cv("c2", "we are looking for a talented instructor"),
            cv("c3", "i have 3 years of experience as a tutor"),
            Document { kind: DocumentKind::Vacancy, ..cv("v1", "we are looking for a talented instructor") },
        ];
        let idx = build_index(&docs, &ck, &tok, 4).unwrap();
        assert_eq!(idx.len(), 4);
        assert_eq!(idx.generation(), 4);
        assert_eq!(idx.entries()[0].vector, idx.entries()[2].vector);
        let recs = recommend(&idx, "we are looking for a talented instructor", &tok, &ck, 5, &Filter::default()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].doc_id, "c2");
        assert!((recs[0].score - 1.0).abs() < 1e-6);
        let empty = EmbeddingIndex::empty(16, 0);
        assert!(recommend(&empty, "anything", &tok, &ck, 3, &Filter::default()).unwrap().is_empty());
        let mut dup = docs.clone();
        dup.push(cv("c1", "again"));
        assert_eq!(build_index(&dup, &ck, &tok, 0), Err(IndexError::DuplicateId("c1".into())));
        assert_eq!(build_index(&[], &ck, &tok, 0), Err(IndexError::EmptyInput));
        let _ = format!("{idx:?}");
    }
}
