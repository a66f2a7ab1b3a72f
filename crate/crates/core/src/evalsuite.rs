//! Ranking metrics, cross-lingual alignment and the language bias audit.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, DocumentKind, LabeledPair};
use crate::encoder::{cosine, EncoderError};
use crate::textprep::TokenizerModel;
use crate::training::Checkpoint;

pub const REPORT_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("relevant set is empty")]
    EmptyRelevantSet,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("lexicon has a repeated {side} term {term:?}")]
    DegenerateLexicon { side: &'static str, term: String },
    #[error("nothing to evaluate: {0}")]
    EmptyInput(&'static str),
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Fraction of `relevant` found among the first `k` of `ranked`.
pub fn recall_at_k<T: Ord>(ranked: &[T], relevant: &BTreeSet<T>, k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevantSet);
    }
    let hits = ranked.iter().take(k).filter(|id| relevant.contains(id)).count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// Reciprocal rank of the first relevant item, 0 if none is ranked.
pub fn mrr<T: Ord>(ranked: &[T], relevant: &BTreeSet<T>) -> Result<f64, EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevantSet);
    }
    Ok(ranked.iter().position(|id| relevant.contains(id)).map_or(0.0, |i| 1.0 / (i + 1) as f64))
}

/// Candidate ids by descending cosine to `query`, ties by ascending id.
pub fn rank_candidates<'a, F>(query: &[f32], candidates: &[&'a str], embedding: F) -> Vec<(&'a str, f64)>
where
    F: Fn(&str) -> &'a [f32],
{
    let mut scored: Vec<(&str, f64)> =
        candidates.iter().map(|&id| (id, cosine(query, embedding(id)).map_or(0.0, |c| c.value))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    scored
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VacancyRow {
    pub vacancy_id: String,
    pub relevant: usize,
    pub recall_at_k: BTreeMap<usize, f64>,
    pub reciprocal_rank: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingSummary {
    pub recall_at_k: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub rows: Vec<VacancyRow>,
}

/// Ranks `candidates` for every vacancy in `pairs` that has at least one
/// positive and averages recall@k and reciprocal rank over those vacancies.
/// Returns `None` when no vacancy has a positive.
pub fn rank_by_vacancy<'a, F>(
    pairs: &[LabeledPair],
    candidates: &[&'a str],
    embedding: F,
    ks: &[usize],
) -> Option<RankingSummary>
where
    F: Fn(&str) -> &'a [f32] + Copy,
{
    let mut relevant: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for p in pairs {
        let entry = relevant.entry(p.vacancy_id.as_str()).or_default();
        if p.y == 1 {
            entry.insert(p.cv_id.as_str());
        }
    }
    let mut rows = Vec::new();
    for (vac, rel) in relevant.iter().filter(|(_, r)| !r.is_empty()) {
        let ranked: Vec<&str> = rank_candidates(embedding(vac), candidates, embedding).into_iter().map(|(id, _)| id).collect();
        let recall = ks.iter().map(|&k| (k, recall_at_k(&ranked, rel, k).unwrap_or(0.0))).collect();
        rows.push(VacancyRow {
            vacancy_id: vac.to_string(),
            relevant: rel.len(),
            recall_at_k: recall,
            reciprocal_rank: mrr(&ranked, rel).unwrap_or(0.0),
        });
    }
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let recall_at_k = ks.iter().map(|&k| (k, rows.iter().map(|r| r.recall_at_k[&k]).sum::<f64>() / n)).collect();
    let mrr = rows.iter().map(|r| r.reciprocal_rank).sum::<f64>() / n;
    Some(RankingSummary { recall_at_k, mrr, rows })
}

/// Fraction of English-side vectors whose nearest Dutch-side vector (ties to
/// the lower index) sits at the same position.
pub fn alignment_from_embeddings(source: &[Vec<f32>], target: &[Vec<f32>]) -> Result<f64, EvalError> {
    if source.is_empty() || source.len() != target.len() {
        return Err(EvalError::EmptyInput("lexicon"));
    }
    let mut correct = 0usize;
    for (i, s) in source.iter().enumerate() {
        let mut best = (0usize, f64::NEG_INFINITY);
        for (j, t) in target.iter().enumerate() {
            let c = cosine(s, t)?.value;
            if c > best.1 {
                best = (j, c);
            }
        }
        correct += (best.0 == i) as usize;
    }
    Ok(correct as f64 / source.len() as f64)
}

/// Embeds every lexicon term on its own and measures translation retrieval
/// (alignment@1).
pub fn alignment_at_1(
    checkpoint: &Checkpoint,
    tokenizer: &TokenizerModel,
    lexicon: &[(String, String)],
) -> Result<f64, EvalError> {
    if lexicon.is_empty() {
        return Err(EvalError::EmptyInput("lexicon"));
    }
    for (side, terms) in [("source", lexicon.iter().map(|p| &p.0).collect::<Vec<_>>()), ("target", lexicon.iter().map(|p| &p.1).collect())] {
        let mut seen = BTreeSet::new();
        for t in terms {
            if !seen.insert(t) {
                return Err(EvalError::DegenerateLexicon { side, term: t.clone() });
            }
        }
    }
    let en: Vec<&str> = lexicon.iter().map(|p| p.0.as_str()).collect();
    let nl: Vec<&str> = lexicon.iter().map(|p| p.1.as_str()).collect();
    let en = checkpoint.embed_texts(tokenizer, &en)?;
    let nl = checkpoint.embed_texts(tokenizer, &nl)?;
    alignment_from_embeddings(&en, &nl)
}

/// Mean |cos(v, a) - cos(v, b)| over every vacancy vector and pair.
pub fn bias_gap_from_embeddings(pairs: &[(Vec<f32>, Vec<f32>)], vacancies: &[Vec<f32>]) -> Result<f64, EvalError> {
    if pairs.is_empty() || vacancies.is_empty() {
        return Err(EvalError::EmptyInput("paired CVs and vacancies"));
    }
    let mut total = 0.0;
    for v in vacancies {
        for (a, b) in pairs {
            total += libm::fabs(cosine(v, a)?.value - cosine(v, b)?.value);
        }
    }
    Ok(total / (pairs.len() * vacancies.len()) as f64)
}

/// Score-level language bias: how differently vacancies score the same
/// candidate written in English versus Dutch.
pub fn bias_gap(
    checkpoint: &Checkpoint,
    tokenizer: &TokenizerModel,
    paired_cvs: &[(&str, &str)],
    vacancies: &[&str],
) -> Result<f64, EvalError> {
    if paired_cvs.is_empty() || vacancies.is_empty() {
        return Err(EvalError::EmptyInput("paired CVs and vacancies"));
    }
    let a: Vec<&str> = paired_cvs.iter().map(|p| p.0).collect();
    let b: Vec<&str> = paired_cvs.iter().map(|p| p.1).collect();
    let a = checkpoint.embed_texts(tokenizer, &a)?;
    let b = checkpoint.embed_texts(tokenizer, &b)?;
    let v = checkpoint.embed_texts(tokenizer, vacancies)?;
    bias_gap_from_embeddings(&a.into_iter().zip(b).collect::<Vec<_>>(), &v)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub checkpoint_id: String,
    pub dataset_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at_k: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub alignment_at_1: f64,
    pub bias_gap: f64,
    /// Mean vacancy-to-CV cosine, grouped by CV language.
    pub language_score_means: BTreeMap<String, f64>,
    pub vacancies: usize,
    pub candidates: usize,
    pub metadata: ReportMetadata,
    pub per_vacancy: Vec<VacancyRow>,
}

struct TestEmbeddings<'a> {
    vacancies: Vec<&'a Document>,
    cvs: Vec<&'a Document>,
    vectors: BTreeMap<&'a str, Vec<f32>>,
}

fn embed_test_split<'a>(
    checkpoint: &Checkpoint,
    tokenizer: &TokenizerModel,
    test: &[LabeledPair],
    documents: &'a [Document],
) -> Result<TestEmbeddings<'a>, EvalError> {
    let by_id: BTreeMap<&str, &Document> = documents.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut ids = BTreeSet::new();
    for p in test {
        for id in [&p.cv_id, &p.vacancy_id] {
            if !by_id.contains_key(id.as_str()) {
                return Err(EvalError::UnknownDocument(id.clone()));
            }
            ids.insert(id.as_str());
        }
    }
    let docs: Vec<&Document> = ids.iter().map(|id| by_id[id]).collect();
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let vecs = checkpoint.embed_texts(tokenizer, &texts)?;
    Ok(TestEmbeddings {
        vacancies: docs.iter().copied().filter(|d| d.kind == DocumentKind::Vacancy).collect(),
        cvs: docs.iter().copied().filter(|d| d.kind == DocumentKind::Cv).collect(),
        vectors: docs.iter().map(|d| d.id.as_str()).zip(vecs).collect(),
    })
}

/// Full report for one checkpoint on a test split: every test vacancy ranks
/// every test CV; alignment@1 uses `lexicon`; the bias gap pairs each
/// translated CV with every test vacancy.
pub fn evaluate(
    checkpoint: &Checkpoint,
    tokenizer: &TokenizerModel,
    test: &[LabeledPair],
    documents: &[Document],
    lexicon: &[(String, String)],
    paired_cvs: &[(Document, Document)],
    metadata: ReportMetadata,
) -> Result<EvalReport, EvalError> {
    let emb = embed_test_split(checkpoint, tokenizer, test, documents)?;
    let cv_ids: Vec<&str> = emb.cvs.iter().map(|d| d.id.as_str()).collect();
    let lookup = |id: &str| emb.vectors[id].as_slice();
    let ranking = rank_by_vacancy(test, &cv_ids, lookup, &REPORT_KS).ok_or(EvalError::EmptyInput("test positives"))?;

    let mut lang_sum: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for v in &emb.vacancies {
        for c in &emb.cvs {
            let s = cosine(lookup(&v.id), lookup(&c.id))?.value;
            let e = lang_sum.entry(c.language.clone()).or_insert((0.0, 0));
            e.0 += s;
            e.1 += 1;
        }
    }
    let language_score_means = lang_sum.into_iter().map(|(l, (s, n))| (l, s / n as f64)).collect();

    let texts: Vec<(&str, &str)> = paired_cvs.iter().map(|(a, b)| (a.text.as_str(), b.text.as_str())).collect();
    let vac_texts: Vec<&str> = emb.vacancies.iter().map(|d| d.text.as_str()).collect();

    Ok(EvalReport {
        recall_at_k: ranking.recall_at_k,
        mrr: ranking.mrr,
        alignment_at_1: alignment_at_1(checkpoint, tokenizer, lexicon)?,
        bias_gap: bias_gap(checkpoint, tokenizer, &texts, &vac_texts)?,
        language_score_means,
        vacancies: ranking.rows.len(),
        candidates: cv_ids.len(),
        metadata,
        per_vacancy: ranking.rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocabularyGapReport {
    /// Positive (vacancy, CV) pairs whose occupation surface forms differ.
    pub eligible: usize,
    /// Of those, how many score the positive above the median negative.
    pub bridged: usize,
}

impl VocabularyGapReport {
    pub fn rate(&self) -> f64 {
        if self.eligible == 0 {
            0.0
        } else {
            self.bridged as f64 / self.eligible as f64
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// For each test vacancy, checks whether positive CVs written with a
/// different occupation surface form (the `surface_form` field) outscore
/// the median of that vacancy's labeled negatives.
pub fn vocabulary_gap(
    checkpoint: &Checkpoint,
    tokenizer: &TokenizerModel,
    test: &[LabeledPair],
    documents: &[Document],
) -> Result<VocabularyGapReport, EvalError> {
    let emb = embed_test_split(checkpoint, tokenizer, test, documents)?;
    let by_id: BTreeMap<&str, &Document> = documents.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut report = VocabularyGapReport { eligible: 0, bridged: 0 };
    for vac in &emb.vacancies {
        let q = emb.vectors[vac.id.as_str()].as_slice();
        let score = |cv: &str| cosine(q, &emb.vectors[cv]).map(|c| c.value);
        let mut negatives = Vec::new();
        for p in test.iter().filter(|p| p.vacancy_id == vac.id && p.y == 0) {
            negatives.push(score(&p.cv_id)?);
        }
        if negatives.is_empty() {
            continue;
        }
        let threshold = median(&mut negatives);
        for p in test.iter().filter(|p| p.vacancy_id == vac.id && p.y == 1) {
            if by_id[p.cv_id.as_str()].field("surface_form") == vac.field("surface_form") {
                continue;
            }
            report.eligible += 1;
            report.bridged += (score(&p.cv_id)? > threshold) as usize;
        }
    }
    Ok(report)
}
