//! Binary checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TMCK"
//! 4       4     format version, u32 LE (currently 1)
//! 8       4     n = byte length of the encoder config JSON, u32 LE
//! 12      n     EncoderConfig as UTF-8 JSON
//! 12+n    4*m   f32 LE: every encoder tensor in canonical order
//!               (row-major), then tau, then b
//! end-4   4     CRC-32 (IEEE) of every preceding byte, u32 LE
//! ```
//!
//! The canonical tensor order is the one of `EncoderParams::tensors`.

use std::path::Path;

use talentmatch_core::encoder::{EncoderConfig, EncoderParams};
use talentmatch_core::training::{Checkpoint, SimilarityHead};

use crate::formats::{read_bytes, write_bytes, FormatError};

pub const MAGIC: &[u8; 4] = b"TMCK";
pub const VERSION: u32 = 1;

const HEADER: usize = 12;
const TRAILER: usize = 4;

pub fn to_bytes(checkpoint: &Checkpoint) -> Vec<u8> {
    let config = serde_json::to_vec(&checkpoint.config).expect("EncoderConfig serializes");
    let floats = checkpoint.params.num_params() + 2;
    let mut out = Vec::with_capacity(HEADER + config.len() + 4 * floats + TRAILER);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    for t in checkpoint.params.tensors() {
        for x in t.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out.extend_from_slice(&checkpoint.head.tau.to_le_bytes());
    out.extend_from_slice(&checkpoint.head.bias.to_le_bytes());
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, FormatError> {
    let corrupt = |m: &str| FormatError::CorruptCheckpoint(m.to_string());
    if bytes.len() < HEADER + TRAILER {
        return Err(corrupt("file too short"));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let body = &bytes[..bytes.len() - TRAILER];
    let stored = u32_at(bytes, bytes.len() - TRAILER);
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(FormatError::CorruptCheckpoint(format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}")));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(FormatError::VersionUnsupported { format: "checkpoint", version });
    }
    let config_len = u32_at(bytes, 8) as usize;
    let floats_at = HEADER.checked_add(config_len).filter(|&e| e <= body.len()).ok_or_else(|| corrupt("config length"))?;
    let config: EncoderConfig =
        serde_json::from_slice(&body[HEADER..floats_at]).map_err(|e| FormatError::CorruptCheckpoint(format!("config: {e}")))?;
    config.validate().map_err(|e| FormatError::CorruptCheckpoint(format!("config: {e}")))?;

    let mut params = EncoderParams::<f32>::zeros(&config);
    let expected = 4 * (params.num_params() + 2);
    let payload = &body[floats_at..];
    if payload.len() != expected {
        return Err(FormatError::CorruptCheckpoint(format!("expected {expected} tensor bytes, found {}", payload.len())));
    }
    let mut values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")));
    for t in params.tensors_mut() {
        for (x, v) in t.as_mut_slice().iter_mut().zip(&mut values) {
            *x = v;
        }
    }
    let tau = values.next().ok_or_else(|| corrupt("missing tau"))?;
    let bias = values.next().ok_or_else(|| corrupt("missing bias"))?;
    Ok(Checkpoint { config, params, head: SimilarityHead { tau, bias } })
}

/// Stable identifier of a checkpoint: its CRC-32 as eight hex digits.
pub fn checkpoint_id(checkpoint: &Checkpoint) -> String {
    let bytes = to_bytes(checkpoint);
    format!("{:08x}", u32_at(&bytes, bytes.len() - TRAILER))
}

pub fn save(path: &Path, checkpoint: &Checkpoint) -> Result<(), FormatError> {
    write_bytes(path, &to_bytes(checkpoint))
}

pub fn load(path: &Path) -> Result<Checkpoint, FormatError> {
    from_bytes(&read_bytes(path)?)
}
