//! End-to-end run on the default synthetic corpus: tokenizer, pairs, split,
//! 20 epochs of training, then the evaluation report.

use std::time::Instant;

use talentmatch_core::corpus::{generate_pairs, split_dataset, synth_corpus, synth_translation_pairs, SplitFractions, DEFAULT_NEG_RATIO};
use talentmatch_core::evalsuite::{evaluate, vocabulary_gap, ReportMetadata};
use talentmatch_core::textprep::{train_bpe, DEFAULT_VOCAB_SIZE};
use talentmatch_core::training::{train_with_observer, Checkpoint};
use talentmatch_core::{EncoderConfig, SynthSpec, TrainConfig};

fn main() {
    let seed = 7;
    let spec = SynthSpec::default();
    let corpus = synth_corpus(&spec, seed).expect("synth");
    let texts: Vec<&str> = corpus.documents.iter().map(|d| d.text.as_str()).collect();
    let tok = train_bpe(&texts, DEFAULT_VOCAB_SIZE, seed).expect("tokenizer");
    let pairs = generate_pairs(&corpus.placements, &corpus.documents, DEFAULT_NEG_RATIO, seed).expect("pairs");
    let split = split_dataset(&pairs, SplitFractions::default(), seed).expect("split");
    println!("vocab {} pairs {} train {} dev {} test {}", tok.vocab_size(), pairs.len(), split.train.len(), split.dev.len(), split.test.len());

    let enc = EncoderConfig::with_vocab(tok.vocab_size());
    let cfg = TrainConfig::default();
    let start = Instant::now();
    let (model, _) = train_with_observer(&split.train, &split.dev, &corpus.documents, &tok, enc, &cfg, &mut |m| {
        println!("epoch {:>2} train {:?} dev {:?} dev recall@10 {:?} ({:.1}s)", m.epoch, m.train_loss, m.dev_loss, m.dev_recall_at_10, start.elapsed().as_secs_f64());
    })
    .expect("train");

    let paired = synth_translation_pairs(&spec, 100, seed).expect("pairs");
    let untrained = Checkpoint::init(enc, cfg.seed).expect("init");
    for (name, ck) in [("untrained", &untrained), ("trained", &model)] {
        let r = evaluate(ck, &tok, &split.test, &corpus.documents, &corpus.bilingual_lexicon, &paired, ReportMetadata::default())
            .expect("evaluate");
        let gap = vocabulary_gap(ck, &tok, &split.test, &corpus.documents).expect("gap");
        println!(
            "{name}: recall {:?} mrr {:.3} align@1 {:.3} bias {:.4} vocab-gap {}/{} ({:.3})",
            r.recall_at_k, r.mrr, r.alignment_at_1, r.bias_gap, gap.bridged, gap.eligible, gap.rate()
        );
    }
}
