use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use talentmatch_core::corpus::{generate_pairs, split_dataset, synth_corpus, Document, DocumentKind, PlacementRecord, SplitFractions};
use talentmatch_core::encoder::EncoderConfig;
use talentmatch_core::textprep::train_bpe;
use talentmatch_core::training::{adam_step, grad, train, AdamState, Checkpoint, PairExample, SimilarityHead, TrainConfig};
use talentmatch_core::{LabeledPair, SynthSpec, TokenSequence};

fn doc(id: String, kind: DocumentKind) -> Document {
    Document { id, kind, language: "nl".into(), text: String::new(), fields: BTreeMap::new() }
}

fn random_dataset(seed: u64, n_cv: usize, n_vac: usize, n_place: usize) -> (Vec<Document>, Vec<PlacementRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs: Vec<Document> = (0..n_cv).map(|i| doc(format!("c{i}"), DocumentKind::Cv)).collect();
    docs.extend((0..n_vac).map(|j| doc(format!("v{j}"), DocumentKind::Vacancy)));
    let placements = (0..n_place)
        .map(|_| PlacementRecord {
            candidate_id: format!("c{}", rng.gen_range(0..n_cv)),
            vacancy_id: format!("v{}", rng.gen_range(0..n_vac)),
            timestamp: rng.gen_range(0..1000),
        })
        .collect();
    (docs, placements)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pairs_never_carry_both_labels(seed in 0u64..10_000, n_cv in 2usize..30, n_vac in 2usize..10, n_place in 1usize..20, ratio in 0usize..4) {
        let (docs, placements) = random_dataset(seed, n_cv, n_vac, n_place);
        let positives: BTreeSet<(&str, &str)> = placements.iter().map(|p| (p.candidate_id.as_str(), p.vacancy_id.as_str())).collect();
        let Ok(pairs) = generate_pairs(&placements, &docs, ratio, seed) else {
            prop_assert!(n_cv * n_vac - positives.len() < ratio * positives.len());
            return Ok(());
        };
        let mut seen = BTreeSet::new();
        for p in &pairs {
            prop_assert!(seen.insert((p.cv_id.clone(), p.vacancy_id.clone())), "duplicate pair");
            prop_assert_eq!(p.y == 1, positives.contains(&(p.cv_id.as_str(), p.vacancy_id.as_str())));
        }
        prop_assert_eq!(pairs.len(), positives.len() * (1 + ratio));
    }

    #[test]
    fn split_is_a_partition_by_vacancy(seed in 0u64..10_000, n_vac in 3usize..15, train in 1u32..8, dev in 1u32..4) {
        let (docs, placements) = random_dataset(seed, 20, n_vac, 3 * n_vac);
        let pairs = generate_pairs(&placements, &docs, 1, seed).unwrap();
        let total = (train + dev + 1) as f64;
        let fractions = SplitFractions { train: train as f64 / total, dev: dev as f64 / total, test: 1.0 / total };
        let Ok(split) = split_dataset(&pairs, fractions, seed) else { return Ok(()) };
        let parts = [&split.train, &split.dev, &split.test];
        let mut union: Vec<&LabeledPair> = parts.iter().flat_map(|p| p.iter()).collect();
        prop_assert_eq!(union.len(), pairs.len());
        union.sort_by(|a, b| (&a.cv_id, &a.vacancy_id).cmp(&(&b.cv_id, &b.vacancy_id)));
        let mut expected: Vec<&LabeledPair> = pairs.iter().collect();
        expected.sort_by(|a, b| (&a.cv_id, &a.vacancy_id).cmp(&(&b.cv_id, &b.vacancy_id)));
        prop_assert_eq!(union, expected);
        let groups: Vec<BTreeSet<&str>> = parts.iter().map(|p| p.iter().map(|x| x.vacancy_id.as_str()).collect()).collect();
        for i in 0..3 {
            for j in i + 1..3 {
                prop_assert!(groups[i].is_disjoint(&groups[j]));
            }
        }
    }
}

fn tiny_config(vocab: usize) -> EncoderConfig {
    EncoderConfig { vocab_size: vocab, d_model: 16, n_layers: 1, n_heads: 2, d_ff: 32, max_len: 32 }
}

#[test]
fn adam_runs_are_bit_identical() {
    let cfg = tiny_config(12);
    let seqs: Vec<TokenSequence> =
        [vec![2, 5, 6, 7, 3], vec![2, 8, 9, 3], vec![2, 10, 11, 5, 3], vec![2, 4, 3]].into_iter().map(TokenSequence::from_ids).collect();
    let batch = [
        PairExample { cv: &seqs[0], vacancy: &seqs[1], y: 1 },
        PairExample { cv: &seqs[2], vacancy: &seqs[1], y: 0 },
        PairExample { cv: &seqs[3], vacancy: &seqs[0], y: 0 },
    ];
    let run = || {
        let mut ck = Checkpoint::init(cfg, 3).unwrap();
        let mut state = AdamState::new(&cfg);
        let tc = TrainConfig::default();
        for t in 1..=25 {
            let (g, _) = grad(&ck.params, &ck.head, &cfg, &batch).unwrap();
            adam_step(&mut ck.params, &mut ck.head, &mut state, &g, &tc, t).unwrap();
        }
        ck
    };
    let (a, b) = (run(), run());
    let bits = |ck: &Checkpoint| -> Vec<u32> {
        let mut v: Vec<u32> = ck.params.tensors().iter().flat_map(|t| t.as_slice().iter().map(|x| x.to_bits())).collect();
        v.extend([ck.head.tau.to_bits(), ck.head.bias.to_bits()]);
        v
    };
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(a.head, SimilarityHead::default());
}

fn small_corpus() -> (Vec<Document>, Vec<LabeledPair>, talentmatch_core::TokenizerModel) {
    let spec = SynthSpec { n_occupations: 4, n_cvs: 40, n_vacancies: 12, ..SynthSpec::default() };
    let corpus = synth_corpus(&spec, 7).unwrap();
    let texts: Vec<&str> = corpus.documents.iter().map(|d| d.text.as_str()).collect();
    let tok = train_bpe(&texts, 200, 7).unwrap();
    let pairs = generate_pairs(&corpus.placements, &corpus.documents, 2, 7).unwrap();
    (corpus.documents, pairs, tok)
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let (docs, pairs, tok) = small_corpus();
    let split = split_dataset(&pairs, SplitFractions::default(), 7).unwrap();
    let cfg = tiny_config(tok.vocab_size());
    let tc = TrainConfig { epochs: 0, ..TrainConfig::default() };
    let (ck, log) = train(&split.train, &split.dev, &docs, &tok, cfg, &tc).unwrap();
    assert_eq!(ck, Checkpoint::init(cfg, tc.seed).unwrap());
    assert_eq!(log.len(), 1);
    assert_eq!(log[0].epoch, 0);
    assert!(log[0].train_loss.is_none() && log[0].dev_loss.is_some());
}

#[test]
fn identical_runs_give_identical_logs() {
    let (docs, pairs, tok) = small_corpus();
    let split = split_dataset(&pairs, SplitFractions::default(), 7).unwrap();
    let cfg = tiny_config(tok.vocab_size());
    let tc = TrainConfig { epochs: 3, batch_size: 8, ..TrainConfig::default() };
    let (a, la) = train(&split.train, &split.dev, &docs, &tok, cfg, &tc).unwrap();
    let (b, lb) = train(&split.train, &split.dev, &docs, &tok, cfg, &tc).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a, b);
    assert_eq!(la.len(), 4);
    let best = la.iter().filter_map(|m| m.dev_loss).fold(f64::INFINITY, f64::min);
    assert!(la.iter().any(|m| m.dev_loss == Some(best)));
}
