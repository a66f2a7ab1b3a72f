use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use talentmatch_core::corpus::{
    generate_pairs, split_dataset, synth_corpus, synth_translation_pairs, Document, LabeledPair, PlacementRecord,
    SplitFractions, SynthSpec, DEFAULT_NEG_RATIO,
};
use talentmatch_core::encoder::EncoderConfig;
use talentmatch_core::evalsuite::{evaluate, ReportMetadata};
use talentmatch_core::matchindex::{build_index, recommend, Filter, Match};
use talentmatch_core::textprep::{normalize, train_bpe, DEFAULT_MAX_LEN, DEFAULT_VOCAB_SIZE};
use talentmatch_core::training::{train_with_observer, TrainConfig};

use crate::config::{resolve_config_path, ServiceConfig};
use crate::formats::{
    load_tokenizer, read_bytes, read_jsonl, read_lexicon, save_tokenizer, write_jsonl, write_lexicon, write_report_csv,
    write_report_json, TranslationPair,
};
use crate::{checkpoint, index_file, service};

#[derive(Debug, Parser)]
#[command(name = "matchd", version, about = "Bilingual CV/vacancy matching: data, training, evaluation and serving")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic bilingual corpus.
    Synth(SynthArgs),
    /// Learn a BPE tokenizer from documents.
    TokenizerTrain(TokenizerArgs),
    /// Build labeled (CV, vacancy) pairs from placements.
    Pairs(PairsArgs),
    /// Split labeled pairs by vacancy into train, dev and test.
    Split(SplitArgs),
    /// Train the encoder.
    Train(TrainArgs),
    /// Embed documents into an index file.
    Index(IndexArgs),
    /// Rank indexed CVs for one vacancy text.
    Recommend(RecommendArgs),
    /// Score a checkpoint on a test split.
    Evaluate(EvaluateArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub cvs: Option<usize>,
    #[arg(long)]
    pub vacancies: Option<usize>,
    /// Number of CVs rendered in both languages.
    #[arg(long, default_value_t = 100)]
    pub translation_pairs: usize,
}

#[derive(Debug, Args)]
pub struct TokenizerArgs {
    #[arg(long)]
    pub documents: PathBuf,
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    pub vocab_size: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    #[arg(long)]
    pub documents: PathBuf,
    #[arg(long)]
    pub placements: PathBuf,
    #[arg(long, default_value_t = DEFAULT_NEG_RATIO)]
    pub neg_ratio: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    /// Directory receiving train.jsonl, dev.jsonl and test.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub train: f64,
    #[arg(long, default_value_t = 0.1)]
    pub dev: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub documents: PathBuf,
    #[arg(long)]
    pub tokenizer: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch metrics as JSON Lines.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 128)]
    pub d_model: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 256)]
    pub d_ff: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub documents: PathBuf,
    #[arg(long)]
    pub tokenizer: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub generation: u64,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[arg(long)]
    pub tokenizer: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub text: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Restrict to CVs in this language; repeatable.
    #[arg(long = "language")]
    pub languages: Vec<String>,
    /// Exact field match as `key=value`; repeatable.
    #[arg(long = "field", value_parser = parse_field)]
    pub fields: Vec<(String, String)>,
}

fn parse_field(s: &str) -> Result<(String, String), String> {
    s.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(|| format!("expected key=value, got {s:?}"))
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub documents: PathBuf,
    #[arg(long)]
    pub tokenizer: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long)]
    pub paired_cvs: PathBuf,
    /// Report output path (pretty JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-vacancy CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Config file; overridden by TM_CONFIG.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::TokenizerTrain(a) => tokenizer_train(&a),
        Command::Pairs(a) => pairs(&a),
        Command::Split(a) => split(&a),
        Command::Train(a) => train(&a),
        Command::Index(a) => index(&a),
        Command::Recommend(a) => recommend_cmd(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Serve(a) => serve(&a),
    }
}

fn synth(a: &SynthArgs) -> anyhow::Result<()> {
    let mut spec = SynthSpec::default();
    if let Some(n) = a.cvs {
        spec.n_cvs = n;
    }
    if let Some(n) = a.vacancies {
        spec.n_vacancies = n;
    }
    let corpus = synth_corpus(&spec, a.seed)?;
    let paired: Vec<TranslationPair> = synth_translation_pairs(&spec, a.translation_pairs, a.seed)?
        .into_iter()
        .map(|(en, nl)| TranslationPair { en, nl })
        .collect();
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_jsonl(&a.out.join("documents.jsonl"), &corpus.documents)?;
    write_jsonl(&a.out.join("placements.jsonl"), &corpus.placements)?;
    write_lexicon(&a.out.join("lexicon.tsv"), &corpus.bilingual_lexicon)?;
    write_jsonl(&a.out.join("paired_cvs.jsonl"), &paired)?;
    eprintln!("wrote {} documents, {} placements to {}", corpus.documents.len(), corpus.placements.len(), a.out.display());
    Ok(())
}

fn tokenizer_train(a: &TokenizerArgs) -> anyhow::Result<()> {
    let docs: Vec<Document> = read_jsonl(&a.documents)?;
    let texts: Vec<String> = docs.iter().map(|d| normalize(&d.text)).collect();
    let model = train_bpe(&texts, a.vocab_size, a.seed)?;
    save_tokenizer(&a.out, &model)?;
    eprintln!("vocabulary size {}", model.vocab_size());
    Ok(())
}

fn pairs(a: &PairsArgs) -> anyhow::Result<()> {
    let docs: Vec<Document> = read_jsonl(&a.documents)?;
    let placements: Vec<PlacementRecord> = read_jsonl(&a.placements)?;
    let pairs = generate_pairs(&placements, &docs, a.neg_ratio, a.seed)?;
    write_jsonl(&a.out, &pairs)?;
    eprintln!("{} labeled pairs", pairs.len());
    Ok(())
}

fn split(a: &SplitArgs) -> anyhow::Result<()> {
    let pairs: Vec<LabeledPair> = read_jsonl(&a.pairs)?;
    let s = split_dataset(&pairs, SplitFractions { train: a.train, dev: a.dev, test: a.test }, a.seed)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (name, part) in [("train", &s.train), ("dev", &s.dev), ("test", &s.test)] {
        write_jsonl(&a.out.join(format!("{name}.jsonl")), part)?;
    }
    eprintln!("train {} dev {} test {}", s.train.len(), s.dev.len(), s.test.len());
    Ok(())
}

fn train(a: &TrainArgs) -> anyhow::Result<()> {
    let docs: Vec<Document> = read_jsonl(&a.documents)?;
    let tokenizer = load_tokenizer(&a.tokenizer)?;
    let train_pairs: Vec<LabeledPair> = read_jsonl(&a.train)?;
    let dev_pairs: Vec<LabeledPair> = match &a.dev {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let enc = EncoderConfig {
        vocab_size: tokenizer.vocab_size(),
        d_model: a.d_model,
        n_layers: a.layers,
        n_heads: a.heads,
        d_ff: a.d_ff,
        max_len: a.max_len,
    };
    let cfg = TrainConfig { learning_rate: a.lr, batch_size: a.batch_size, epochs: a.epochs, seed: a.seed, ..TrainConfig::default() };
    let (model, log) = train_with_observer(&train_pairs, &dev_pairs, &docs, &tokenizer, enc, &cfg, &mut |m| {
        eprintln!("epoch {:>3}  train {}  dev {}  dev recall@10 {}", m.epoch, opt(m.train_loss), opt(m.dev_loss), opt(m.dev_recall_at_10));
    })?;
    checkpoint::save(&a.out, &model)?;
    if let Some(p) = &a.metrics {
        write_jsonl(p, &log)?;
    }
    eprintln!("checkpoint {}", checkpoint::checkpoint_id(&model));
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn index(a: &IndexArgs) -> anyhow::Result<()> {
    let docs: Vec<Document> = read_jsonl(&a.documents)?;
    let tokenizer = load_tokenizer(&a.tokenizer)?;
    let model = checkpoint::load(&a.checkpoint)?;
    let index = build_index(&docs, &model, &tokenizer, a.generation)?;
    index_file::save(&a.out, &index)?;
    eprintln!("indexed {} documents", index.len());
    Ok(())
}

#[derive(Serialize)]
struct RecommendOutput {
    matches: Vec<Match>,
    model: String,
    index_generation: u64,
}

fn recommend_cmd(a: &RecommendArgs) -> anyhow::Result<()> {
    let tokenizer = load_tokenizer(&a.tokenizer)?;
    let model = checkpoint::load(&a.checkpoint)?;
    let index = index_file::load(&a.index)?;
    let mut filter = Filter::default();
    for (k, v) in &a.fields {
        filter = filter.with_field(k, v);
    }
    if !a.languages.is_empty() {
        filter = filter.with_languages(a.languages.iter().cloned());
    }
    let matches = recommend(&index, &a.text, &tokenizer, &model, a.k, &filter)?;
    let out = RecommendOutput { matches, model: checkpoint::checkpoint_id(&model), index_generation: index.generation() };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> anyhow::Result<()> {
    let docs: Vec<Document> = read_jsonl(&a.documents)?;
    let tokenizer = load_tokenizer(&a.tokenizer)?;
    let model = checkpoint::load(&a.checkpoint)?;
    let test: Vec<LabeledPair> = read_jsonl(&a.test)?;
    let lexicon = read_lexicon(&a.lexicon)?;
    let paired: Vec<TranslationPair> = read_jsonl(&a.paired_cvs)?;
    let paired: Vec<(Document, Document)> = paired.into_iter().map(|p| (p.en, p.nl)).collect();
    let metadata = ReportMetadata {
        checkpoint_id: checkpoint::checkpoint_id(&model),
        dataset_id: dataset_id(&a.test)?,
        seed: a.seed,
    };
    let report = evaluate(&model, &tokenizer, &test, &docs, &lexicon, &paired, metadata)?;
    write_report_json(&a.out, &report)?;
    if let Some(p) = &a.csv {
        write_report_csv(p, &report)?;
    }
    let recall10 = report.recall_at_k.get(&10).copied().unwrap_or(f64::NAN);
    eprintln!(
        "recall@10 {recall10:.4}  mrr {:.4}  alignment@1 {:.4}  bias gap {:.4}",
        report.mrr, report.alignment_at_1, report.bias_gap
    );
    Ok(())
}

/// CRC-32 of the test split file, as eight hex digits.
fn dataset_id(path: &Path) -> anyhow::Result<String> {
    Ok(format!("{:08x}", crc32fast::hash(&read_bytes(path)?)))
}

fn serve(a: &ServeArgs) -> anyhow::Result<()> {
    let path = resolve_config_path(a.config.as_deref());
    let config = ServiceConfig::load(&path)?;
    tokio::runtime::Builder::new_multi_thread().enable_all().build()?.block_on(service::serve(config))
}
