//! Binary embedding-index format.
//!
//! ```text
//! header   magic "TMIX" | version u32 | dimension u32 | count u64 | generation u64
//! entry    id_len u32 | id (UTF-8) | dimension x f32 | meta_len u32 | meta JSON
//! trailer  CRC-32 (IEEE) of every preceding byte, u32
//! ```
//!
//! All integers and floats are little-endian. The metadata JSON holds
//! `kind`, `language`, `fields` and `degenerate`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use talentmatch_core::matchindex::{EmbeddingIndex, IndexEntry};
use talentmatch_core::DocumentKind;

use crate::formats::{read_bytes, write_bytes, FormatError};

pub const MAGIC: &[u8; 4] = b"TMIX";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EntryMeta {
    kind: DocumentKind,
    language: String,
    fields: BTreeMap<String, String>,
    degenerate: bool,
}

pub fn to_bytes(index: &EmbeddingIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(index.dimension() as u32).to_le_bytes());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    out.extend_from_slice(&index.generation().to_le_bytes());
    for e in index.entries() {
        out.extend_from_slice(&(e.doc_id.len() as u32).to_le_bytes());
        out.extend_from_slice(e.doc_id.as_bytes());
        for x in &e.vector {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let meta = EntryMeta { kind: e.kind, language: e.language.clone(), fields: e.fields.clone(), degenerate: e.degenerate };
        let meta = serde_json::to_vec(&meta).expect("metadata serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn corrupt(m: &str) -> FormatError {
    FormatError::CorruptIndex(m.to_string())
}

pub fn from_bytes(bytes: &[u8]) -> Result<EmbeddingIndex, FormatError> {
    if bytes.len() < 32 {
        return Err(corrupt("file too short"));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().expect("4 bytes")) {
        return Err(corrupt("CRC mismatch"));
    }
    let mut r = Reader { bytes: body, at: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::VersionUnsupported { format: "index", version });
    }
    let dimension = r.u32()? as usize;
    let count = r.u64()?;
    let generation = r.u64()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let id_len = r.u32()? as usize;
        let doc_id = std::str::from_utf8(r.take(id_len)?).map_err(|_| corrupt("id is not UTF-8"))?.to_string();
        let vector = r.take(4 * dimension)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let meta_len = r.u32()? as usize;
        let meta: EntryMeta =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| FormatError::CorruptIndex(format!("metadata of {doc_id}: {e}")))?;
        entries.push(IndexEntry {
            doc_id,
            kind: meta.kind,
            language: meta.language,
            fields: meta.fields,
            vector,
            degenerate: meta.degenerate,
        });
    }
    if r.at != body.len() {
        return Err(corrupt("trailing bytes after the last entry"));
    }
    EmbeddingIndex::from_entries(dimension, generation, entries).map_err(|e| FormatError::CorruptIndex(e.to_string()))
}

pub fn save(path: &Path, index: &EmbeddingIndex) -> Result<(), FormatError> {
    write_bytes(path, &to_bytes(index))
}

pub fn load(path: &Path) -> Result<EmbeddingIndex, FormatError> {
    from_bytes(&read_bytes(path)?)
}
