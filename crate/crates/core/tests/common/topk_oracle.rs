//! Exhaustive top-k: score every passing entry, sort, cut. Scores come from
//! the same `cosine` the index uses so that tie order is comparable bit for
//! bit; selection and ordering are independent of the heap.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use talentmatch_core::encoder::cosine;
use talentmatch_core::matchindex::{EmbeddingIndex, IndexEntry};
use talentmatch_core::{DocumentKind, Filter};

pub fn brute_force_top_k(index: &EmbeddingIndex, query: &[f32], k: usize, filter: &Filter) -> Vec<(String, f64)> {
    let mut scored: Vec<(String, f64)> = index
        .entries()
        .iter()
        .filter(|e| filter.matches(e))
        .map(|e| (e.doc_id.clone(), cosine(query, &e.vector).unwrap().value))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

pub const DIM: usize = 16;
const LOCATIONS: &[&str] = &["amsterdam", "utrecht", "groningen"];

pub fn unit(rng: &mut ChaCha8Rng) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..DIM).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let n = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|&x| (x as f64 / n) as f32).collect();
        }
    }
}

/// `n` entries; about one in ten copies an earlier vector to force exact ties.
pub fn random_index(n: usize, seed: u64) -> EmbeddingIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries: Vec<IndexEntry> = Vec::with_capacity(n);
    for i in 0..n {
        let vector = if i > 0 && rng.gen_bool(0.1) { entries[rng.gen_range(0..i)].vector.clone() } else { unit(&mut rng) };
        let mut fields = BTreeMap::new();
        fields.insert("location".to_string(), LOCATIONS[rng.gen_range(0..LOCATIONS.len())].to_string());
        entries.push(IndexEntry {
            // ids deliberately not in insertion order
            doc_id: format!("doc-{:05}", (i * 7919) % 100_003),
            kind: if rng.gen_bool(0.8) { DocumentKind::Cv } else { DocumentKind::Vacancy },
            language: if rng.gen_bool(0.9) { "nl".into() } else { "en".into() },
            fields,
            vector,
            degenerate: false,
        });
    }
    EmbeddingIndex::from_entries(DIM, 1, entries).unwrap()
}

pub fn filters() -> [Filter; 3] {
    [
        Filter::default(),
        Filter::default().with_kind(DocumentKind::Cv).with_languages(["en"]),
        Filter::default().with_field("location", "utrecht").with_languages(["nl", "en"]),
    ]
}
