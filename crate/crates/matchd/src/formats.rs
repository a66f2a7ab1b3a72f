//! Text file formats: JSON-Lines records, the lexicon TSV, tokenizer JSON
//! and evaluation reports. The binary formats live in
//! [`crate::checkpoint`] and [`crate::index_file`].

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use talentmatch_core::corpus::Document;
use talentmatch_core::evalsuite::EvalReport;
use talentmatch_core::textprep::{TokenizerModel, BOS, EOS, PAD, UNK};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("unsupported {format} format version {version}")]
    VersionUnsupported { format: &'static str, version: u32 },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::IoFailure { path: path.to_path_buf(), source }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(io_err(path))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// One parsed JSON-Lines record, or why that line was rejected. Blank lines
/// are skipped; `line` is 1-based.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Vec<(usize, Result<T, String>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, serde_json::from_str(l).map_err(|e| e.to_string())))
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_jsonl(&text)
        .into_iter()
        .map(|(line, r)| r.map_err(|message| FormatError::Parse { path: path.to_path_buf(), line, message }))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), FormatError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| io_err(path)(e.into()))?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// `en_term<TAB>nl_term` per line, no header.
pub fn read_lexicon(path: &Path) -> Result<Vec<(String, String)>, FormatError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(FormatError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected 2 tab-separated columns, found {}", cols.len()),
            });
        }
        out.push((cols[0].to_string(), cols[1].to_string()));
    }
    Ok(out)
}

pub fn write_lexicon(path: &Path, lexicon: &[(String, String)]) -> Result<(), FormatError> {
    let mut text = String::new();
    for (en, nl) in lexicon {
        text.push_str(en);
        text.push('\t');
        text.push_str(nl);
        text.push('\n');
    }
    write_bytes(path, text.as_bytes())
}

/// The same candidate rendered in English and in Dutch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationPair {
    pub en: Document,
    pub nl: Document,
}

pub const TOKENIZER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    pub pad: u32,
    pub unk: u32,
    pub bos: u32,
    pub eos: u32,
}

const SPECIALS: Specials = Specials { pad: PAD, unk: UNK, bos: BOS, eos: EOS };

/// On-disk tokenizer. Field order is fixed by the struct so files are
/// byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerFile {
    pub version: u32,
    pub alphabet: Vec<String>,
    pub merges: Vec<(String, String)>,
    pub specials: Specials,
}

pub fn tokenizer_to_json(model: &TokenizerModel) -> String {
    let file = TokenizerFile {
        version: TOKENIZER_VERSION,
        alphabet: model.alphabet().iter().map(|c| c.to_string()).collect(),
        merges: model.merges().to_vec(),
        specials: SPECIALS,
    };
    let mut s = serde_json::to_string_pretty(&file).expect("tokenizer serializes");
    s.push('\n');
    s
}

pub fn tokenizer_from_json(path: &Path, text: &str) -> Result<TokenizerModel, FormatError> {
    let invalid = |message: String| FormatError::Invalid { path: path.to_path_buf(), message };
    let file: TokenizerFile = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
    if file.version != TOKENIZER_VERSION {
        return Err(FormatError::VersionUnsupported { format: "tokenizer", version: file.version });
    }
    if file.specials != SPECIALS {
        return Err(invalid(format!("special ids must be {SPECIALS:?}")));
    }
    let mut alphabet = Vec::with_capacity(file.alphabet.len());
    for s in &file.alphabet {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => alphabet.push(c),
            _ => return Err(invalid(format!("alphabet entry {s:?} is not a single character"))),
        }
    }
    TokenizerModel::from_parts(alphabet, file.merges).map_err(|e| invalid(e.to_string()))
}

pub fn save_tokenizer(path: &Path, model: &TokenizerModel) -> Result<(), FormatError> {
    write_bytes(path, tokenizer_to_json(model).as_bytes())
}

pub fn load_tokenizer(path: &Path) -> Result<TokenizerModel, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    tokenizer_from_json(path, &text)
}

pub fn write_report_json(path: &Path, report: &EvalReport) -> Result<(), FormatError> {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

/// One row per test vacancy: id, relevant count, recall@k columns, RR.
pub fn write_report_csv(path: &Path, report: &EvalReport) -> Result<(), FormatError> {
    let ks: Vec<usize> = report.recall_at_k.keys().copied().collect();
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path)(e.into()))?;
    let mut header = vec!["vacancy_id".to_string(), "relevant".to_string()];
    header.extend(ks.iter().map(|k| format!("recall@{k}")));
    header.push("reciprocal_rank".into());
    w.write_record(&header).map_err(|e| io_err(path)(e.into()))?;
    for row in &report.per_vacancy {
        let mut rec = vec![row.vacancy_id.clone(), row.relevant.to_string()];
        rec.extend(ks.iter().map(|k| row.recall_at_k.get(k).map_or(String::new(), |v| v.to_string())));
        rec.push(row.reciprocal_rank.to_string());
        w.write_record(&rec).map_err(|e| io_err(path)(e.into()))?;
    }
    w.flush().map_err(io_err(path))
}
