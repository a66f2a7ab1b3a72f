//! Brute-force reference BPE over plain strings.
//!
//! Words are the space-separated pieces of each text; the space itself is
//! never merged. Each round rescans every word, counts every adjacent pair
//! (overlaps included), picks the highest count, breaking ties by the
//! smallest (left, right) string pair, and rewrites words left to right.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn reference_merges(corpus: &[String], vocab_size: usize) -> Vec<(String, String)> {
    let mut alphabet: Vec<char> = corpus.iter().flat_map(|s| s.chars()).collect();
    alphabet.sort();
    alphabet.dedup();
    let mut vocab: Vec<String> = alphabet.iter().map(|c| c.to_string()).collect();
    let mut size = 4 + vocab.len();

    let mut words: Vec<Vec<String>> = Vec::new();
    for text in corpus {
        for w in text.split(' ') {
            if !w.is_empty() {
                words.push(w.chars().map(|c| c.to_string()).collect());
            }
        }
    }

    let mut merges = Vec::new();
    while size < vocab_size {
        let mut counts: HashMap<(String, String), usize> = HashMap::new();
        for w in &words {
            for i in 0..w.len().saturating_sub(1) {
                *counts.entry((w[i].clone(), w[i + 1].clone())).or_default() += 1;
            }
        }
        let best = counts.iter().map(|(p, &c)| (c, p.clone())).max_by(|a, b| a.0.cmp(&b.0).then_with(|| b.1.cmp(&a.1)));
        let Some((count, (l, r))) = best else { break };
        if count < 2 {
            break;
        }
        let joined = format!("{l}{r}");
        if !vocab.contains(&joined) {
            vocab.push(joined.clone());
            size += 1;
        }
        for w in &mut words {
            let mut out = Vec::with_capacity(w.len());
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && w[i] == l && w[i + 1] == r {
                    out.push(joined.clone());
                    i += 2;
                } else {
                    out.push(w[i].clone());
                    i += 1;
                }
            }
            *w = out;
        }
        merges.push((l, r));
    }
    merges
}

const SYMBOLS: &[char] = &['a', 'b', 'c', 'd', 'é', 'ß', ' '];

/// Up to 200 characters over a small alphabet with spaces, spread over
/// one to six texts.
pub fn random_corpus(rng: &mut ChaCha8Rng) -> Vec<String> {
    let budget = rng.gen_range(1..=200);
    let n_texts = rng.gen_range(1..=6);
    let alphabet = rng.gen_range(2..=SYMBOLS.len());
    let mut texts = vec![String::new(); n_texts];
    for _ in 0..budget {
        let t = rng.gen_range(0..n_texts);
        texts[t].push(SYMBOLS[rng.gen_range(0..alphabet)]);
    }
    texts
}
