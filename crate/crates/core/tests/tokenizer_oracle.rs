#[path = "common/bpe_oracle.rs"]
mod bpe_oracle;

use bpe_oracle::{random_corpus, reference_merges};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use talentmatch_core::textprep::{normalize, train_bpe, EOS};

#[test]
fn matches_reference_on_random_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut total_merges = 0;
    for case in 0..200 {
        let corpus = random_corpus(&mut rng);
        let mut alphabet: Vec<char> = corpus.iter().flat_map(|s| s.chars()).collect();
        alphabet.sort();
        alphabet.dedup();
        if alphabet.is_empty() {
            continue;
        }
        let vocab_size = alphabet.len() + 4 + rng.gen_range(0..40);
        let model = train_bpe(&corpus, vocab_size, case).unwrap();
        let want = reference_merges(&corpus, vocab_size);
        assert_eq!(model.merges(), want.as_slice(), "case {case}: {corpus:?} vocab {vocab_size}");
        assert!(model.vocab_size() <= vocab_size);
        total_merges += want.len();
    }
    assert!(total_merges > 500, "oracle corpora too easy: {total_merges} merges");
}

fn trained_model() -> talentmatch_core::TokenizerModel {
    let corpus = ["ik heb tien jaar ervaring als logistiek medewerker", "we are looking for a talented tutor", "abab abab ababab"];
    let corpus: Vec<String> = corpus.iter().map(|s| normalize(s)).collect();
    train_bpe(&corpus, 120, 0).unwrap()
}

proptest! {
    #[test]
    fn normalize_is_idempotent(s in "\\PC{0,40}|[ \\t\\nA-Za-zÀ-ÿ]{0,40}") {
        let once = normalize(&s);
        prop_assert_eq!(normalize(&once), once);
    }

    #[test]
    fn round_trip_on_alphabet_text(s in "[abehijklnorstuvwgmdk ]{0,60}") {
        let model = trained_model();
        let seq = model.encode(&s, 1024);
        prop_assert_eq!(model.decode(&seq).unwrap(), normalize(&s));
    }

    #[test]
    fn truncation_is_monotone(s in "[a-z ]{0,80}", l1 in 2usize..40, extra in 1usize..40) {
        let model = trained_model();
        let short = model.encode(&s, l1);
        let long = model.encode(&s, l1 + extra);
        prop_assert!(short.len() <= l1);
        prop_assert_eq!(*short.ids.last().unwrap(), EOS);
        let body = &short.ids[..short.len() - 1];
        prop_assert_eq!(body, &long.ids[..body.len()]);
    }
}
