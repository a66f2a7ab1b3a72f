//! Bi-encoder CV/vacancy matching core.
//!
//! Everything in this crate is pure computation over in-memory values and
//! builds without `std` (an allocator is required). File formats, the CLI
//! and the HTTP service live in the `matchd` crate.
//!
//! Pipeline, bottom-up:
//!
//! ```text
//! textprep   normalize -> BPE tokenizer -> TokenSequence
//! corpus     documents, placements, labeled pairs, synthetic bilingual corpus
//! encoder    shared-weight transformer tower -> embedding, cosine
//! training   scaled-cosine logistic loss, reverse-mode gradients, Adam, train loop
//! matchindex unit-normalized embedding store, filtered exact top-k
//! evalsuite  recall@k, MRR, cross-lingual alignment@1, language bias gap
//! ```

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod encoder;
pub mod evalsuite;
pub mod matchindex;
pub mod scalar;
pub mod textprep;
pub mod training;

pub use corpus::{Document, DocumentKind, LabeledPair, PlacementRecord, SynthSpec};
pub use encoder::{EncoderConfig, EncoderParams, Tensor};
pub use matchindex::{EmbeddingIndex, Filter, Match};
pub use scalar::Scalar;
pub use textprep::{TokenSequence, TokenizerModel};
pub use training::{Checkpoint, SimilarityHead, TrainConfig};
