//! Cosine-similarity logistic loss, exact batch gradients, Adam and the
//! training loop.
//!
//! For a CV embedding `u`, a vacancy embedding `v` and a label `y`:
//!
//! ```text
//! s    = cos(u, v)
//! p    = sigmoid(tau * s + b)
//! loss = -[ y ln p + (1 - y) ln(1 - p) ],   p clamped to [1e-12, 1 - 1e-12]
//! ```
//!
//! `tau` (initialized to 5) and `b` (initialized to 0) are learned along
//! with the encoder. Batch loss is the mean over pairs. The loss head always
//! runs in f64 whatever the tensor type.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, DocumentKind, LabeledPair};
use crate::encoder::{self, cosine, EncoderConfig, EncoderError, EncoderParams, ForwardCache};
use crate::evalsuite;
use crate::scalar::Scalar;
use crate::textprep::{TokenSequence, TokenizerModel};

const PROB_CLAMP: f64 = 1e-12;
const SHUFFLE_STREAM: u64 = 0x5eed_5eed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainingError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("gradient batch is empty")]
    EmptyBatch,
    #[error("training split is empty")]
    EmptyDataset,
    #[error("gradient and parameter shapes differ")]
    ShapeMismatch,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("encoder vocab {encoder} does not match tokenizer vocab {tokenizer}")]
    VocabMismatch { encoder: usize, tokenizer: usize },
    #[error("pair references unknown document {0:?}")]
    UnknownDocument(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityHead<F> {
    pub tau: F,
    pub bias: F,
}

impl<F: Scalar> Default for SimilarityHead<F> {
    fn default() -> Self {
        Self { tau: F::from_f64(5.0), bias: F::zero() }
    }
}

impl<F: Scalar> SimilarityHead<F> {
    pub fn cast<G: Scalar>(&self) -> SimilarityHead<G> {
        SimilarityHead { tau: G::from_f64(self.tau.as_f64()), bias: G::from_f64(self.bias.as_f64()) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLossResult {
    pub similarity: f64,
    pub probability: f64,
    pub loss: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Loss and its derivative with respect to the logit `tau * s + b`. Inside
/// the clamp region the derivative is zero.
fn head_loss(s: f64, y: u8, tau: f64, bias: f64) -> (PairLossResult, f64) {
    let p = sigmoid(tau * s + bias);
    let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let yf = if y == 0 { 0.0 } else { 1.0 };
    let loss = -(yf * libm::log(pc) + (1.0 - yf) * libm::log(1.0 - pc));
    let d_logit = if pc == p { p - yf } else { 0.0 };
    (PairLossResult { similarity: s, probability: p, loss }, d_logit)
}

pub fn pair_loss<F: Scalar>(u: &[F], v: &[F], y: u8, head: &SimilarityHead<F>) -> Result<PairLossResult, TrainingError> {
    if u.len() != v.len() {
        return Err(TrainingError::DimensionMismatch(u.len(), v.len()));
    }
    let s = cosine(u, v)?.value;
    Ok(head_loss(s, y, head.tau.as_f64(), head.bias.as_f64()).0)
}

/// One supervised example: a CV sequence, a vacancy sequence and a label.
#[derive(Debug, Clone, Copy)]
pub struct PairExample<'a> {
    pub cv: &'a TokenSequence,
    pub vacancy: &'a TokenSequence,
    pub y: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub encoder: EncoderParams<F>,
    pub tau: F,
    pub bias: F,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros(config: &EncoderConfig) -> Self {
        Self { encoder: EncoderParams::zeros(config), tau: F::zero(), bias: F::zero() }
    }
}

// d cos(a, b) / d a, in f64
fn cosine_grad(a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    let na = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum());
    if na < 1e-12 || nb < 1e-12 {
        return vec![0.0; a.len()];
    }
    a.iter().zip(b).map(|(&ai, &bi)| bi / (na * nb) - s * ai / (na * na)).collect()
}

/// Exact gradient of the mean batch loss with respect to every encoder
/// tensor, `tau` and `b`. Each distinct sequence in the batch is encoded
/// and back-propagated once. Returns the gradients and the mean loss.
pub fn grad<F: Scalar>(
    params: &EncoderParams<F>,
    head: &SimilarityHead<F>,
    config: &EncoderConfig,
    batch: &[PairExample<'_>],
) -> Result<(Gradients<F>, f64), TrainingError> {
    if batch.is_empty() {
        return Err(TrainingError::EmptyBatch);
    }
    let mut slot: BTreeMap<&[u32], usize> = BTreeMap::new();
    let mut unique: Vec<&TokenSequence> = Vec::new();
    let mut pair_slots = Vec::with_capacity(batch.len());
    for ex in batch {
        let cv = *slot.entry(ex.cv.ids.as_slice()).or_insert_with(|| {
            unique.push(ex.cv);
            unique.len() - 1
        });
        let vac = *slot.entry(ex.vacancy.ids.as_slice()).or_insert_with(|| {
            unique.push(ex.vacancy);
            unique.len() - 1
        });
        pair_slots.push((cv, vac));
    }

    let mut embs: Vec<Vec<f64>> = Vec::with_capacity(unique.len());
    let mut caches: Vec<ForwardCache<F>> = Vec::with_capacity(unique.len());
    for seq in &unique {
        let (e, c) = encoder::forward_cached(params, config, seq)?;
        embs.push(e.iter().map(|x| x.as_f64()).collect());
        caches.push(c);
    }

    let n = batch.len() as f64;
    let tau = head.tau.as_f64();
    let bias = head.bias.as_f64();
    let mut d_embs = vec![vec![0.0f64; config.d_model]; unique.len()];
    let (mut d_tau, mut d_bias, mut total) = (0.0f64, 0.0f64, 0.0f64);
    for (ex, &(cu, cv)) in batch.iter().zip(&pair_slots) {
        let s = cosine(&embs[cu], &embs[cv])?.value;
        let (res, d_logit) = head_loss(s, ex.y, tau, bias);
        total += res.loss;
        let dz = d_logit / n;
        d_tau += dz * s;
        d_bias += dz;
        let ds = dz * tau;
        let gu = cosine_grad(&embs[cu], &embs[cv], s);
        let gv = cosine_grad(&embs[cv], &embs[cu], s);
        for (acc, g) in d_embs[cu].iter_mut().zip(&gu) {
            *acc += ds * g;
        }
        for (acc, g) in d_embs[cv].iter_mut().zip(&gv) {
            *acc += ds * g;
        }
    }

    let mut grads = Gradients::zeros(config);
    grads.tau = F::from_f64(d_tau);
    grads.bias = F::from_f64(d_bias);
    for (cache, d_emb) in caches.iter().zip(&d_embs) {
        let d: Vec<F> = d_emb.iter().map(|&x| F::from_f64(x)).collect();
        encoder::backward(params, config, cache, &d, &mut grads.encoder);
    }
    Ok((grads, total / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, batch_size: 32, epochs: 20, beta1: 0.9, beta2: 0.999, eps: 1e-8, seed: 7 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TrainingError::InvalidConfig("learning_rate, batch_size, eps must be positive; betas in [0, 1)".into()))
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub first: Gradients<F>,
    pub second: Gradients<F>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(config: &EncoderConfig) -> Self {
        Self { first: Gradients::zeros(config), second: Gradients::zeros(config) }
    }
}

struct AdamCoefs<F> {
    lr_t: F,
    beta1: F,
    beta2: F,
    one_minus_beta1: F,
    one_minus_beta2: F,
    eps_t: F,
}

fn adam_coefs<F: Scalar>(config: &TrainConfig, t: u64) -> AdamCoefs<F> {
    let t = t as i32;
    let c1 = 1.0 - libm::pow(config.beta1, t as f64);
    let c2 = 1.0 - libm::pow(config.beta2, t as f64);
    // lr * m_hat / (sqrt(v_hat) + eps) == lr_t * m / (sqrt(v) + eps_t)
    let sqrt_c2 = libm::sqrt(c2);
    AdamCoefs {
        lr_t: F::from_f64(config.learning_rate * sqrt_c2 / c1),
        beta1: F::from_f64(config.beta1),
        beta2: F::from_f64(config.beta2),
        one_minus_beta1: F::from_f64(1.0 - config.beta1),
        one_minus_beta2: F::from_f64(1.0 - config.beta2),
        eps_t: F::from_f64(config.eps * sqrt_c2),
    }
}

fn adam_update<F: Scalar>(p: &mut [F], m: &mut [F], v: &mut [F], g: &[F], c: &AdamCoefs<F>) {
    for i in 0..p.len() {
        m[i] = c.beta1 * m[i] + c.one_minus_beta1 * g[i];
        v[i] = c.beta2 * v[i] + c.one_minus_beta2 * g[i] * g[i];
        p[i] -= c.lr_t * m[i] / (v[i].sqrt() + c.eps_t);
    }
}

/// One bias-corrected Adam step. Tensors are updated in canonical encoder
/// order, then `tau`, then `b`.
pub fn adam_step<F: Scalar>(
    params: &mut EncoderParams<F>,
    head: &mut SimilarityHead<F>,
    state: &mut AdamState<F>,
    grads: &Gradients<F>,
    config: &TrainConfig,
    t: u64,
) -> Result<(), TrainingError> {
    assert!(t >= 1, "Adam step index starts at 1");
    let shapes_match = |a: &EncoderParams<F>, b: &EncoderParams<F>| {
        let (x, y) = (a.tensors(), b.tensors());
        x.len() == y.len() && x.iter().zip(&y).all(|(p, q)| p.shape() == q.shape())
    };
    if !shapes_match(params, &grads.encoder)
        || !shapes_match(params, &state.first.encoder)
        || !shapes_match(params, &state.second.encoder)
    {
        return Err(TrainingError::ShapeMismatch);
    }
    let c = adam_coefs::<F>(config, t);
    let g = grads.encoder.tensors();
    let m = state.first.encoder.tensors_mut();
    let v = state.second.encoder.tensors_mut();
    for (((p, m), v), g) in params.tensors_mut().into_iter().zip(m).zip(v).zip(g) {
        adam_update(p.as_mut_slice(), m.as_mut_slice(), v.as_mut_slice(), g.as_slice(), &c);
    }
    adam_update(
        core::slice::from_mut(&mut head.tau),
        core::slice::from_mut(&mut state.first.tau),
        core::slice::from_mut(&mut state.second.tau),
        &[grads.tau],
        &c,
    );
    adam_update(
        core::slice::from_mut(&mut head.bias),
        core::slice::from_mut(&mut state.first.bias),
        core::slice::from_mut(&mut state.second.bias),
        &[grads.bias],
        &c,
    );
    Ok(())
}

/// A trained (or freshly initialized) model: one encoder parameter set
/// shared by both towers plus the similarity head.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub params: EncoderParams<f32>,
    pub head: SimilarityHead<f32>,
}

impl Checkpoint {
    /// Glorot-initialized encoder, head at its defaults.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self, TrainingError> {
        config.validate()?;
        Ok(Self { config, params: EncoderParams::xavier(&config, seed), head: SimilarityHead::default() })
    }

    pub fn embed(&self, tokenizer: &TokenizerModel, text: &str) -> Result<Vec<f32>, EncoderError> {
        encoder::forward(&self.params, &self.config, &tokenizer.encode(text, self.config.max_len))
    }

    /// Embeds many texts through [`encoder::embed_batch`], grouping by
    /// length to limit padding. Output order follows the input.
    pub fn embed_texts<S: AsRef<str>>(&self, tokenizer: &TokenizerModel, texts: &[S]) -> Result<Vec<Vec<f32>>, EncoderError> {
        let seqs: Vec<TokenSequence> = texts.iter().map(|t| tokenizer.encode(t.as_ref(), self.config.max_len)).collect();
        embed_sequences(&self.params, &self.config, &seqs)
    }
}

pub(crate) fn embed_sequences<F: Scalar>(
    params: &EncoderParams<F>,
    config: &EncoderConfig,
    seqs: &[TokenSequence],
) -> Result<Vec<Vec<F>>, EncoderError> {
    const CHUNK: usize = 32;
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.sort_by_key(|&i| seqs[i].len());
    let mut out = vec![Vec::new(); seqs.len()];
    for chunk in order.chunks(CHUNK) {
        let batch: Vec<TokenSequence> = chunk.iter().map(|&i| seqs[i].clone()).collect();
        let rows = encoder::embed_batch(params, config, &batch).map_err(|e| match e {
            EncoderError::InBatch { index, source } => EncoderError::InBatch { index: chunk[index], source },
            other => other,
        })?;
        for (r, &i) in chunk.iter().enumerate() {
            out[i] = rows.row(r).to_vec();
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub dev_loss: Option<f64>,
    #[serde(rename = "dev_recall@10")]
    pub dev_recall_at_10: Option<f64>,
}

fn tokenize_documents<'a>(
    documents: &'a [Document],
    tokenizer: &TokenizerModel,
    max_len: usize,
) -> BTreeMap<&'a str, (TokenSequence, &'a Document)> {
    documents.iter().map(|d| (d.id.as_str(), (tokenizer.encode(&d.text, max_len), d))).collect()
}

struct DevEval {
    loss: f64,
    recall_at_10: Option<f64>,
}

fn evaluate_dev(
    params: &EncoderParams<f32>,
    head: &SimilarityHead<f32>,
    config: &EncoderConfig,
    dev: &[LabeledPair],
    seqs: &BTreeMap<&str, (TokenSequence, &Document)>,
) -> Result<DevEval, TrainingError> {
    let mut ids: Vec<&str> = dev.iter().flat_map(|p| [p.cv_id.as_str(), p.vacancy_id.as_str()]).collect();
    ids.sort_unstable();
    ids.dedup();
    let batch: Vec<TokenSequence> = ids.iter().map(|id| seqs[id].0.clone()).collect();
    let embs = embed_sequences(params, config, &batch)?;
    let emb: BTreeMap<&str, &Vec<f32>> = ids.iter().copied().zip(&embs).collect();
    let mut total = 0.0;
    for p in dev {
        total += pair_loss(emb[p.cv_id.as_str()], emb[p.vacancy_id.as_str()], p.y, head)?.loss;
    }
    let cv_ids: Vec<&str> = ids.iter().copied().filter(|id| seqs[id].1.kind == DocumentKind::Cv).collect();
    let ranking = evalsuite::rank_by_vacancy(dev, &cv_ids, |id| emb[id].as_slice(), &[10]);
    Ok(DevEval { loss: total / dev.len() as f64, recall_at_10: ranking.and_then(|r| r.recall_at_k.get(&10).copied()) })
}

/// Trains from a Glorot initialization seeded with `train_config.seed`.
///
/// Epoch 0 records the dev metrics of the initialization; every later epoch
/// shuffles the training pairs, takes one Adam step per batch and records
/// the mean training loss and dev metrics. Returns the checkpoint with the
/// lowest dev loss (the last one when there is no dev split) and the log.
pub fn train(
    train_pairs: &[LabeledPair],
    dev_pairs: &[LabeledPair],
    documents: &[Document],
    tokenizer: &TokenizerModel,
    enc_config: EncoderConfig,
    train_config: &TrainConfig,
) -> Result<(Checkpoint, Vec<EpochMetrics>), TrainingError> {
    train_with_observer(train_pairs, dev_pairs, documents, tokenizer, enc_config, train_config, &mut |_| {})
}

pub fn train_with_observer(
    train_pairs: &[LabeledPair],
    dev_pairs: &[LabeledPair],
    documents: &[Document],
    tokenizer: &TokenizerModel,
    enc_config: EncoderConfig,
    train_config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochMetrics),
) -> Result<(Checkpoint, Vec<EpochMetrics>), TrainingError> {
    if train_pairs.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    train_config.validate()?;
    enc_config.validate()?;
    if enc_config.vocab_size != tokenizer.vocab_size() {
        return Err(TrainingError::VocabMismatch { encoder: enc_config.vocab_size, tokenizer: tokenizer.vocab_size() });
    }
    let seqs = tokenize_documents(documents, tokenizer, enc_config.max_len);
    for p in train_pairs.iter().chain(dev_pairs) {
        for id in [&p.cv_id, &p.vacancy_id] {
            if !seqs.contains_key(id.as_str()) {
                return Err(TrainingError::UnknownDocument(id.to_string()));
            }
        }
    }

    let mut model = Checkpoint::init(enc_config, train_config.seed)?;
    let mut state = AdamState::<f32>::new(&enc_config);
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed ^ SHUFFLE_STREAM);
    let mut log = Vec::with_capacity(train_config.epochs + 1);
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let mut step = 0u64;

    let dev_metrics = |model: &Checkpoint| -> Result<Option<DevEval>, TrainingError> {
        if dev_pairs.is_empty() {
            return Ok(None);
        }
        evaluate_dev(&model.params, &model.head, &enc_config, dev_pairs, &seqs).map(Some)
    };
    let dev = dev_metrics(&model)?;
    let mut best_loss = dev.as_ref().map_or(f64::INFINITY, |d| d.loss);
    let mut best = model.clone();
    let first = EpochMetrics {
        epoch: 0,
        train_loss: None,
        dev_loss: dev.as_ref().map(|d| d.loss),
        dev_recall_at_10: dev.and_then(|d| d.recall_at_10),
    };
    observer(&first);
    log.push(first);

    for epoch in 1..=train_config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(train_config.batch_size) {
            let batch: Vec<PairExample<'_>> = chunk
                .iter()
                .map(|&i| {
                    let p = &train_pairs[i];
                    PairExample { cv: &seqs[p.cv_id.as_str()].0, vacancy: &seqs[p.vacancy_id.as_str()].0, y: p.y }
                })
                .collect();
            let (g, loss) = grad(&model.params, &model.head, &enc_config, &batch)?;
            step += 1;
            adam_step(&mut model.params, &mut model.head, &mut state, &g, train_config, step)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let dev = dev_metrics(&model)?;
        let entry = EpochMetrics {
            epoch,
            train_loss: Some(loss_sum / train_pairs.len() as f64),
            dev_loss: dev.as_ref().map(|d| d.loss),
            dev_recall_at_10: dev.and_then(|d| d.recall_at_10),
        };
        match entry.dev_loss {
            Some(l) if l < best_loss => {
                best_loss = l;
                best = model.clone();
            }
            None => best = model.clone(),
            _ => {}
        }
        observer(&entry);
        log.push(entry);
    }
    Ok((best, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::{BOS, EOS};
    use alloc::vec;

    #[test]
    fn loss_examples() {
        let head = SimilarityHead::<f64>::default();
        let r = head_loss(0.0, 1, 5.0, 0.0).0;
        assert!((r.probability - 0.5).abs() < 1e-15);
        assert!((r.loss - core::f64::consts::LN_2).abs() < 1e-12);
        // -ln(sigmoid(5)) = ln(1 + e^-5)
        let want = libm::log1p(libm::exp(-5.0));
        assert!((head_loss(1.0, 1, 5.0, 0.0).0.loss - want).abs() < 1e-12);
        assert!((want - 0.0067153).abs() < 1e-7);
        let u = [0.4, -0.1, 0.9];
        let v = [0.2, 0.3, -0.5];
        for y in [0, 1] {
            let a = pair_loss(&u, &v, y, &head).unwrap();
            let b = pair_loss(&v, &u, y, &head).unwrap();
            assert_eq!(a.loss, b.loss);
        }
        assert_eq!(pair_loss(&u, &v[..2], 1, &head), Err(TrainingError::DimensionMismatch(3, 2)));
    }

    #[test]
    fn clamped_probabilities_stay_finite() {
        let (r, d) = head_loss(1.0, 0, 100.0, 0.0);
        assert!((r.loss - -libm::log(1.0 - (1.0 - PROB_CLAMP))).abs() < 1e-9);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn loss_monotone_in_similarity() {
        for tau in [0.5, 5.0, 20.0] {
            let grid: Vec<f64> = (-20..=20).map(|i| i as f64 / 20.0).collect();
            for w in grid.windows(2) {
                assert!(head_loss(w[1], 1, tau, 0.3).0.loss < head_loss(w[0], 1, tau, 0.3).0.loss);
                assert!(head_loss(w[1], 0, tau, 0.3).0.loss > head_loss(w[0], 0, tau, 0.3).0.loss);
            }
        }
    }

    #[test]
    fn first_adam_step_has_lr_magnitude() {
        let cfg = TrainConfig::default();
        for g in [1e-3, 0.5, -3.0, 1e4] {
            let c = adam_coefs::<f64>(&cfg, 1);
            let (mut p, mut m, mut v) = ([1.0f64], [0.0], [0.0]);
            adam_update(&mut p, &mut m, &mut v, &[g], &c);
            let delta = (p[0] - 1.0).abs();
            assert!(delta <= cfg.learning_rate && delta >= 0.999 * cfg.learning_rate, "{g}: {delta}");
            assert_eq!(p[0] < 1.0, g > 0.0);
        }
    }

    #[test]
    fn zero_gradients_leave_params() {
        let enc = EncoderConfig { vocab_size: 10, d_model: 4, n_layers: 1, n_heads: 2, d_ff: 6, max_len: 8 };
        let mut params = EncoderParams::<f32>::xavier(&enc, 1);
        let before = params.clone();
        let mut head = SimilarityHead::default();
        let mut state = AdamState::new(&enc);
        let g = Gradients::zeros(&enc);
        adam_step(&mut params, &mut head, &mut state, &g, &TrainConfig::default(), 1).unwrap();
        assert_eq!(params, before);
        assert_eq!(head, SimilarityHead::default());
        let wrong = Gradients::<f32>::zeros(&EncoderConfig { d_ff: 7, ..enc });
        assert_eq!(
            adam_step(&mut params, &mut head, &mut state, &wrong, &TrainConfig::default(), 2),
            Err(TrainingError::ShapeMismatch)
        );
    }

    #[test]
    fn bias_gradient_is_residual() {
        let enc = EncoderConfig { vocab_size: 16, d_model: 8, n_layers: 1, n_heads: 2, d_ff: 12, max_len: 16 };
        let params = EncoderParams::<f64>::xavier(&enc, 2);
        let head = SimilarityHead { tau: 3.0, bias: 0.25 };
        let a = TokenSequence::from_ids(vec![BOS, 4, 5, EOS]);
        let b = TokenSequence::from_ids(vec![BOS, 6, 7, 8, EOS]);
        for y in [0, 1] {
            let (g, _) = grad(&params, &head, &enc, &[PairExample { cv: &a, vacancy: &b, y }]).unwrap();
            let u = encoder::forward(&params, &enc, &a).unwrap();
            let v = encoder::forward(&params, &enc, &b).unwrap();
            let p = pair_loss(&u, &v, y, &head).unwrap().probability;
            assert!((g.bias - (p - y as f64)).abs() < 1e-12);
        }
        assert_eq!(grad::<f64>(&params, &head, &enc, &[]).unwrap_err(), TrainingError::EmptyBatch);
    }

    #[test]
    fn duplicated_batch_same_mean_gradient() {
        let enc = EncoderConfig { vocab_size: 16, d_model: 8, n_layers: 1, n_heads: 2, d_ff: 12, max_len: 16 };
        let params = EncoderParams::<f64>::xavier(&enc, 8);
        let head = SimilarityHead::default();
        let s: Vec<TokenSequence> = (0..4u32).map(|i| TokenSequence::from_ids(vec![BOS, 4 + i, 9 + i, EOS])).collect();
        let batch = vec![
            PairExample { cv: &s[0], vacancy: &s[1], y: 1 },
            PairExample { cv: &s[2], vacancy: &s[1], y: 0 },
            PairExample { cv: &s[3], vacancy: &s[0], y: 0 },
        ];
        let doubled: Vec<PairExample<'_>> = batch.iter().chain(&batch).copied().collect();
        let (g1, l1) = grad(&params, &head, &enc, &batch).unwrap();
        let (g2, l2) = grad(&params, &head, &enc, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        assert!((g1.tau - g2.tau).abs() < 1e-12 && (g1.bias - g2.bias).abs() < 1e-12);
        for (a, b) in g1.encoder.tensors().iter().zip(g2.encoder.tensors()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }
}
