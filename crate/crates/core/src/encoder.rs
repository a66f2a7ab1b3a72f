//! Shared-weight transformer tower.
//!
//! ```text
//! ids -> token embedding + sinusoidal position
//!     -> n_layers x [ x + Attn(LN1(x)) ; x + FF(LN2(x)) ]   (pre-norm, GELU)
//!     -> final LN -> mean over content positions
//! ```
//!
//! CVs and vacancies go through the same [`EncoderParams`]; there is no
//! second tower. Attention logits toward PAD keys are set to -1e9 before
//! the softmax, which makes their weight exactly zero, so padding a sequence
//! inside a batch leaves its embedding unchanged.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{axpy, dot, Scalar};
use crate::textprep::{TokenSequence, BOS, EOS, PAD};

const LN_EPS: f64 = 1e-5;
const MASKED_LOGIT: f64 = -1e9;
const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncoderError {
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("token id {id} is outside the vocabulary of {vocab_size}")]
    InvalidTokenId { id: u32, vocab_size: usize },
    #[error("sequence has no BOS, EOS or content position to pool over")]
    EmptySequence,
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("sequence {index} in batch: {source}")]
    InBatch {
        index: usize,
        #[source]
        source: alloc::boxed::Box<EncoderError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl EncoderConfig {
    /// Default architecture (d_model 128, 2 layers, 4 heads, d_ff 256,
    /// max_len 128) for a given vocabulary.
    pub fn with_vocab(vocab_size: usize) -> Self {
        Self { vocab_size, d_model: 128, n_layers: 2, n_heads: 4, d_ff: 256, max_len: 128 }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::InvalidConfig(m.into()));
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.max_len == 0 {
            return bad("vocab_size, d_model, n_heads, d_ff and max_len must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        Ok(())
    }
}

/// Dense row-major matrix. Vectors are stored as a single row.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![F::zero(); rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: F) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| G::from_f64(x.as_f64())).collect() }
    }

    fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = F::zero());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub ln1_scale: Tensor<F>,
    pub ln1_offset: Tensor<F>,
    pub wq: Tensor<F>,
    pub wk: Tensor<F>,
    pub wv: Tensor<F>,
    pub wo: Tensor<F>,
    pub ln2_scale: Tensor<F>,
    pub ln2_offset: Tensor<F>,
    pub ff_in: Tensor<F>,
    pub ff_in_bias: Tensor<F>,
    pub ff_out: Tensor<F>,
    pub ff_out_bias: Tensor<F>,
}

/// All learnable encoder tensors. The canonical tensor order (used by the
/// optimizer and the checkpoint format) is: token embedding; per layer
/// ln1 scale, ln1 offset, Wq, Wk, Wv, Wo, ln2 scale, ln2 offset, FF-in,
/// FF-in bias, FF-out, FF-out bias; final scale, final offset.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<F> {
    pub token_embedding: Tensor<F>,
    pub layers: Vec<LayerParams<F>>,
    pub final_scale: Tensor<F>,
    pub final_offset: Tensor<F>,
}

impl<F: Scalar> EncoderParams<F> {
    /// Zero-valued tensors of the right shapes (also used for gradients and
    /// optimizer moments).
    pub fn zeros(config: &EncoderConfig) -> Self {
        let d = config.d_model;
        let ff = config.d_ff;
        let z = Tensor::zeros;
        Self {
            token_embedding: z(config.vocab_size, d),
            layers: (0..config.n_layers)
                .map(|_| LayerParams {
                    ln1_scale: z(1, d),
                    ln1_offset: z(1, d),
                    wq: z(d, d),
                    wk: z(d, d),
                    wv: z(d, d),
                    wo: z(d, d),
                    ln2_scale: z(1, d),
                    ln2_offset: z(1, d),
                    ff_in: z(d, ff),
                    ff_in_bias: z(1, ff),
                    ff_out: z(ff, d),
                    ff_out_bias: z(1, d),
                })
                .collect(),
            final_scale: z(1, d),
            final_offset: z(1, d),
        }
    }

    /// Uniform Glorot initialization of every matrix from `seed`; norm
    /// scales start at one, offsets and biases at zero.
    pub fn xavier(config: &EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(config);
        let mut glorot = |t: &mut Tensor<F>| {
            let bound = libm::sqrt(6.0 / (t.rows + t.cols) as f64);
            for x in t.as_mut_slice() {
                *x = F::from_f64(rng.gen_range(-bound..bound));
            }
        };
        glorot(&mut p.token_embedding);
        for layer in &mut p.layers {
            for w in [&mut layer.wq, &mut layer.wk, &mut layer.wv, &mut layer.wo, &mut layer.ff_in, &mut layer.ff_out] {
                glorot(w);
            }
            layer.ln1_scale = Tensor::filled(1, config.d_model, F::one());
            layer.ln2_scale = Tensor::filled(1, config.d_model, F::one());
        }
        p.final_scale = Tensor::filled(1, config.d_model, F::one());
        p
    }

    pub fn tensors(&self) -> Vec<&Tensor<F>> {
        let mut out = vec![&self.token_embedding];
        for l in &self.layers {
            out.extend([
                &l.ln1_scale,
                &l.ln1_offset,
                &l.wq,
                &l.wk,
                &l.wv,
                &l.wo,
                &l.ln2_scale,
                &l.ln2_offset,
                &l.ff_in,
                &l.ff_in_bias,
                &l.ff_out,
                &l.ff_out_bias,
            ]);
        }
        out.extend([&self.final_scale, &self.final_offset]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = vec![&mut self.token_embedding];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_scale,
                &mut l.ln1_offset,
                &mut l.wq,
                &mut l.wk,
                &mut l.wv,
                &mut l.wo,
                &mut l.ln2_scale,
                &mut l.ln2_offset,
                &mut l.ff_in,
                &mut l.ff_in_bias,
                &mut l.ff_out,
                &mut l.ff_out_bias,
            ]);
        }
        out.extend([&mut self.final_scale, &mut self.final_offset]);
        out
    }

    /// Names in canonical order, matching [`tensors`](Self::tensors).
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec![String::from("token_embedding")];
        for i in 0..self.layers.len() {
            for n in [
                "ln1.scale",
                "ln1.offset",
                "attn.q",
                "attn.k",
                "attn.v",
                "attn.o",
                "ln2.scale",
                "ln2.offset",
                "ff.in",
                "ff.in_bias",
                "ff.out",
                "ff.out_bias",
            ] {
                out.push(format!("layers.{i}.{n}"));
            }
        }
        out.push("final.scale".into());
        out.push("final.offset".into());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> EncoderParams<G> {
        EncoderParams {
            token_embedding: self.token_embedding.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_scale: l.ln1_scale.cast(),
                    ln1_offset: l.ln1_offset.cast(),
                    wq: l.wq.cast(),
                    wk: l.wk.cast(),
                    wv: l.wv.cast(),
                    wo: l.wo.cast(),
                    ln2_scale: l.ln2_scale.cast(),
                    ln2_offset: l.ln2_offset.cast(),
                    ff_in: l.ff_in.cast(),
                    ff_in_bias: l.ff_in_bias.cast(),
                    ff_out: l.ff_out.cast(),
                    ff_out_bias: l.ff_out_bias.cast(),
                })
                .collect(),
            final_scale: self.final_scale.cast(),
            final_offset: self.final_offset.cast(),
        }
    }

    /// True when every tensor has the shape `config` prescribes.
    pub fn matches(&self, config: &EncoderConfig) -> bool {
        let expected = Self::zeros(config);
        let ours = self.tensors();
        let theirs = expected.tensors();
        ours.len() == theirs.len() && ours.iter().zip(&theirs).all(|(a, b)| a.shape() == b.shape())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.as_slice().iter().all(|x| x.is_finite()))
    }

    pub fn set_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill_zero();
        }
    }
}

/// Embedding output of one tower.
pub type EmbeddingVector<F = f32> = Vec<F>;

/// Token embeddings enter the residual stream multiplied by sqrt(d_model).
pub fn embedding_scale<F: Scalar>(d_model: usize) -> F {
    F::from_f64(libm::sqrt(d_model as f64))
}

fn positional<F: Scalar>(pos: usize, d_model: usize, out: &mut [F]) {
    for i in (0..d_model).step_by(2) {
        let freq = libm::pow(10_000.0, -(i as f64) / d_model as f64);
        let angle = pos as f64 * freq;
        out[i] = F::from_f64(libm::sin(angle));
        if i + 1 < d_model {
            out[i + 1] = F::from_f64(libm::cos(angle));
        }
    }
}

// out[r] = a[r] * W   (a: rows x W.rows)
fn matmul<F: Scalar>(a: &[F], rows: usize, w: &Tensor<F>) -> Vec<F> {
    let mut out = vec![F::zero(); rows * w.cols];
    for r in 0..rows {
        let a_row = &a[r * w.rows..(r + 1) * w.rows];
        let o = &mut out[r * w.cols..(r + 1) * w.cols];
        for (k, &x) in a_row.iter().enumerate() {
            axpy(x, w.row(k), o);
        }
    }
    out
}

// out[r] = a[r] * W^T   (a: rows x W.cols)
fn matmul_t<F: Scalar>(a: &[F], rows: usize, w: &Tensor<F>) -> Vec<F> {
    let mut out = vec![F::zero(); rows * w.rows];
    for r in 0..rows {
        let a_row = &a[r * w.cols..(r + 1) * w.cols];
        for k in 0..w.rows {
            out[r * w.rows + k] = dot(a_row, w.row(k));
        }
    }
    out
}

// grad += a^T * b
fn accumulate_outer<F: Scalar>(a: &[F], b: &[F], rows: usize, grad: &mut Tensor<F>) {
    for r in 0..rows {
        let b_row = &b[r * grad.cols..(r + 1) * grad.cols];
        for k in 0..grad.rows {
            let x = a[r * grad.rows + k];
            if x != F::zero() {
                axpy(x, b_row, grad.row_mut(k));
            }
        }
    }
}

fn add_bias<F: Scalar>(x: &mut [F], bias: &Tensor<F>) {
    for row in x.chunks_exact_mut(bias.cols) {
        for (v, &b) in row.iter_mut().zip(bias.as_slice()) {
            *v += b;
        }
    }
}

fn accumulate_bias<F: Scalar>(d: &[F], grad: &mut Tensor<F>) {
    let g = grad.as_mut_slice();
    for row in d.chunks_exact(g.len()) {
        for (acc, &v) in g.iter_mut().zip(row) {
            *acc += v;
        }
    }
}

#[derive(Debug, Clone)]
struct NormCache<F> {
    xhat: Vec<F>,
    rstd: Vec<F>,
}

fn layer_norm<F: Scalar>(x: &[F], d: usize, scale: &Tensor<F>, offset: &Tensor<F>) -> (Vec<F>, NormCache<F>) {
    let rows = x.len() / d;
    let mut y = vec![F::zero(); x.len()];
    let mut xhat = vec![F::zero(); x.len()];
    let mut rstd = vec![F::zero(); rows];
    let inv_d = F::from_f64(1.0 / d as f64);
    let eps = F::from_f64(LN_EPS);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().fold(F::zero(), |a, &b| a + b) * inv_d;
        let var = row.iter().fold(F::zero(), |a, &b| a + (b - mean) * (b - mean)) * inv_d;
        let s = F::one() / (var + eps).sqrt();
        rstd[r] = s;
        for i in 0..d {
            let h = (row[i] - mean) * s;
            xhat[r * d + i] = h;
            y[r * d + i] = h * scale.data[i] + offset.data[i];
        }
    }
    (y, NormCache { xhat, rstd })
}

fn layer_norm_backward<F: Scalar>(
    dy: &[F],
    d: usize,
    cache: &NormCache<F>,
    scale: &Tensor<F>,
    d_scale: &mut Tensor<F>,
    d_offset: &mut Tensor<F>,
    dx: &mut [F],
) {
    let inv_d = F::from_f64(1.0 / d as f64);
    let mut dxhat = vec![F::zero(); d];
    for (r, &s) in cache.rstd.iter().enumerate() {
        let dy_row = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut sum = F::zero();
        let mut sum_xh = F::zero();
        for i in 0..d {
            d_scale.data[i] += dy_row[i] * xh[i];
            d_offset.data[i] += dy_row[i];
            dxhat[i] = dy_row[i] * scale.data[i];
            sum += dxhat[i];
            sum_xh += dxhat[i] * xh[i];
        }
        let mean = sum * inv_d;
        let mean_xh = sum_xh * inv_d;
        for i in 0..d {
            dx[r * d + i] += s * (dxhat[i] - mean - xh[i] * mean_xh);
        }
    }
}

fn gelu<F: Scalar>(x: F) -> F {
    let half = F::from_f64(0.5);
    half * x * (F::one() + (x * F::from_f64(core::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let half = F::from_f64(0.5);
    let cdf = half * (F::one() + (x * F::from_f64(core::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp_libm() * F::from_f64(0.398_942_280_401_432_7);
    cdf + x * pdf
}

#[derive(Debug, Clone)]
struct LayerCache<F> {
    ln1: NormCache<F>,
    h1: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    /// heads x len x len attention weights
    probs: Vec<F>,
    ctx: Vec<F>,
    ln2: NormCache<F>,
    h2: Vec<F>,
    pre: Vec<F>,
    act: Vec<F>,
}

/// Intermediate activations of one forward pass, consumed by
/// [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    ids: Vec<u32>,
    layers: Vec<LayerCache<F>>,
    final_norm: NormCache<F>,
    pooled: Vec<usize>,
}

fn check_sequence(config: &EncoderConfig, seq: &TokenSequence) -> Result<Vec<usize>, EncoderError> {
    if seq.len() > config.max_len {
        return Err(EncoderError::SequenceTooLong { len: seq.len(), max_len: config.max_len });
    }
    if let Some(&id) = seq.ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(EncoderError::InvalidTokenId { id, vocab_size: config.vocab_size });
    }
    let content: Vec<usize> = (0..seq.len()).filter(|&i| seq.content_mask[i]).collect();
    if !content.is_empty() {
        return Ok(content);
    }
    let frame: Vec<usize> = (0..seq.len()).filter(|&i| matches!(seq.ids[i], BOS | EOS)).collect();
    if frame.is_empty() {
        return Err(EncoderError::EmptySequence);
    }
    Ok(frame)
}

fn attention<F: Scalar>(config: &EncoderConfig, q: &[F], k: &[F], v: &[F], key_pad: &[bool]) -> (Vec<F>, Vec<F>) {
    let len = key_pad.len();
    let d = config.d_model;
    let hd = config.head_dim();
    let scale = F::from_f64(1.0 / libm::sqrt(hd as f64));
    let masked = F::from_f64(MASKED_LOGIT);
    let mut probs = vec![F::zero(); config.n_heads * len * len];
    let mut ctx = vec![F::zero(); len * d];
    for h in 0..config.n_heads {
        let off = h * hd;
        for i in 0..len {
            let p = &mut probs[(h * len + i) * len..(h * len + i + 1) * len];
            let qi = &q[i * d + off..i * d + off + hd];
            let mut max = F::neg_infinity();
            for j in 0..len {
                let s = if key_pad[j] { masked } else { dot(qi, &k[j * d + off..j * d + off + hd]) * scale };
                p[j] = s;
                if s > max {
                    max = s;
                }
            }
            let mut sum = F::zero();
            for x in p.iter_mut() {
                *x = (*x - max).exp_libm();
                sum += *x;
            }
            let inv = F::one() / sum;
            let c = &mut ctx[i * d + off..i * d + off + hd];
            for j in 0..len {
                p[j] *= inv;
                if p[j] != F::zero() {
                    axpy(p[j], &v[j * d + off..j * d + off + hd], c);
                }
            }
        }
    }
    (probs, ctx)
}

/// Runs the tower and keeps what the backward pass needs.
pub fn forward_cached<F: Scalar>(
    params: &EncoderParams<F>,
    config: &EncoderConfig,
    seq: &TokenSequence,
) -> Result<(EmbeddingVector<F>, ForwardCache<F>), EncoderError> {
    let pooled = check_sequence(config, seq)?;
    let d = config.d_model;
    let len = seq.len();
    let key_pad: Vec<bool> = seq.ids.iter().map(|&id| id == PAD).collect();

    let scale = embedding_scale::<F>(d);
    let mut x = vec![F::zero(); len * d];
    for (i, &id) in seq.ids.iter().enumerate() {
        let row = &mut x[i * d..(i + 1) * d];
        positional(i, d, row);
        for (o, &e) in row.iter_mut().zip(params.token_embedding.row(id as usize)) {
            *o += scale * e;
        }
    }

    let mut layers = Vec::with_capacity(params.layers.len());
    for lp in &params.layers {
        let (h1, ln1) = layer_norm(&x, d, &lp.ln1_scale, &lp.ln1_offset);
        let q = matmul(&h1, len, &lp.wq);
        let k = matmul(&h1, len, &lp.wk);
        let v = matmul(&h1, len, &lp.wv);
        let (probs, ctx) = attention(config, &q, &k, &v, &key_pad);
        let attn_out = matmul(&ctx, len, &lp.wo);
        for (xi, a) in x.iter_mut().zip(&attn_out) {
            *xi += *a;
        }
        let (h2, ln2) = layer_norm(&x, d, &lp.ln2_scale, &lp.ln2_offset);
        let mut pre = matmul(&h2, len, &lp.ff_in);
        add_bias(&mut pre, &lp.ff_in_bias);
        let act: Vec<F> = pre.iter().map(|&z| gelu(z)).collect();
        let mut ff = matmul(&act, len, &lp.ff_out);
        add_bias(&mut ff, &lp.ff_out_bias);
        for (xi, f) in x.iter_mut().zip(&ff) {
            *xi += *f;
        }
        layers.push(LayerCache { ln1, h1, q, k, v, probs, ctx, ln2, h2, pre, act });
    }

    let (out, final_norm) = layer_norm(&x, d, &params.final_scale, &params.final_offset);
    let mut emb = vec![F::zero(); d];
    for &i in &pooled {
        for (e, &o) in emb.iter_mut().zip(&out[i * d..(i + 1) * d]) {
            *e += o;
        }
    }
    let inv = F::from_f64(1.0 / pooled.len() as f64);
    emb.iter_mut().for_each(|e| *e *= inv);
    Ok((emb, ForwardCache { ids: seq.ids.clone(), layers, final_norm, pooled }))
}

/// Embeds one token sequence.
pub fn forward<F: Scalar>(
    params: &EncoderParams<F>,
    config: &EncoderConfig,
    seq: &TokenSequence,
) -> Result<EmbeddingVector<F>, EncoderError> {
    forward_cached(params, config, seq).map(|(e, _)| e)
}

/// Accumulates into `grads` the gradient of a scalar objective whose
/// derivative with respect to this pass's embedding is `d_emb`.
pub fn backward<F: Scalar>(
    params: &EncoderParams<F>,
    config: &EncoderConfig,
    cache: &ForwardCache<F>,
    d_emb: &[F],
    grads: &mut EncoderParams<F>,
) {
    let d = config.d_model;
    let ff = config.d_ff;
    let hd = config.head_dim();
    let len = cache.ids.len();
    let scale = F::from_f64(1.0 / libm::sqrt(hd as f64));

    let mut d_out = vec![F::zero(); len * d];
    let inv = F::from_f64(1.0 / cache.pooled.len() as f64);
    for &i in &cache.pooled {
        for (g, &e) in d_out[i * d..(i + 1) * d].iter_mut().zip(d_emb) {
            *g = e * inv;
        }
    }
    let mut dx = vec![F::zero(); len * d];
    layer_norm_backward(
        &d_out,
        d,
        &cache.final_norm,
        &params.final_scale,
        &mut grads.final_scale,
        &mut grads.final_offset,
        &mut dx,
    );

    for ((lp, lc), lg) in params.layers.iter().zip(&cache.layers).zip(grads.layers.iter_mut()).rev() {
        // feed-forward sublayer; dx flows through the residual unchanged
        accumulate_bias(&dx, &mut lg.ff_out_bias);
        accumulate_outer(&lc.act, &dx, len, &mut lg.ff_out);
        let mut d_pre = matmul_t(&dx, len, &lp.ff_out);
        for (g, &z) in d_pre.iter_mut().zip(&lc.pre) {
            *g *= gelu_grad(z);
        }
        accumulate_bias(&d_pre, &mut lg.ff_in_bias);
        accumulate_outer(&lc.h2, &d_pre, len, &mut lg.ff_in);
        let d_h2 = matmul_t(&d_pre, len, &lp.ff_in);
        debug_assert_eq!(d_pre.len(), len * ff);
        layer_norm_backward(&d_h2, d, &lc.ln2, &lp.ln2_scale, &mut lg.ln2_scale, &mut lg.ln2_offset, &mut dx);

        // attention sublayer
        accumulate_outer(&lc.ctx, &dx, len, &mut lg.wo);
        let d_ctx = matmul_t(&dx, len, &lp.wo);
        let mut dq = vec![F::zero(); len * d];
        let mut dk = vec![F::zero(); len * d];
        let mut dv = vec![F::zero(); len * d];
        let mut dp = vec![F::zero(); len];
        for h in 0..config.n_heads {
            let off = h * hd;
            for i in 0..len {
                let p = &lc.probs[(h * len + i) * len..(h * len + i + 1) * len];
                let dci = &d_ctx[i * d + off..i * d + off + hd];
                let mut weighted = F::zero();
                for j in 0..len {
                    dp[j] = if p[j] != F::zero() { dot(dci, &lc.v[j * d + off..j * d + off + hd]) } else { F::zero() };
                    weighted += dp[j] * p[j];
                    if p[j] != F::zero() {
                        axpy(p[j], dci, &mut dv[j * d + off..j * d + off + hd]);
                    }
                }
                let qi = &lc.q[i * d + off..i * d + off + hd];
                for j in 0..len {
                    if p[j] == F::zero() {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - weighted) * scale;
                    axpy(ds, &lc.k[j * d + off..j * d + off + hd], &mut dq[i * d + off..i * d + off + hd]);
                    axpy(ds, qi, &mut dk[j * d + off..j * d + off + hd]);
                }
            }
        }
        accumulate_outer(&lc.h1, &dq, len, &mut lg.wq);
        accumulate_outer(&lc.h1, &dk, len, &mut lg.wk);
        accumulate_outer(&lc.h1, &dv, len, &mut lg.wv);
        let mut d_h1 = matmul_t(&dq, len, &lp.wq);
        for (a, b) in d_h1.iter_mut().zip(matmul_t(&dk, len, &lp.wk)) {
            *a += b;
        }
        for (a, b) in d_h1.iter_mut().zip(matmul_t(&dv, len, &lp.wv)) {
            *a += b;
        }
        layer_norm_backward(&d_h1, d, &lc.ln1, &lp.ln1_scale, &mut lg.ln1_scale, &mut lg.ln1_offset, &mut dx);
    }

    let scale = embedding_scale::<F>(d);
    for (i, &id) in cache.ids.iter().enumerate() {
        let g = grads.token_embedding.row_mut(id as usize);
        for (a, &b) in g.iter_mut().zip(&dx[i * d..(i + 1) * d]) {
            *a += scale * b;
        }
    }
}

/// Embeds a batch. Sequences are right-padded with PAD to the longest one;
/// masking keeps every row equal to the unpadded forward pass.
pub fn embed_batch<F: Scalar>(
    params: &EncoderParams<F>,
    config: &EncoderConfig,
    seqs: &[TokenSequence],
) -> Result<Tensor<F>, EncoderError> {
    let width = seqs.iter().map(TokenSequence::len).max().unwrap_or(0);
    let mut out = Tensor::zeros(seqs.len(), config.d_model);
    for (i, seq) in seqs.iter().enumerate() {
        let wrap = |e| EncoderError::InBatch { index: i, source: alloc::boxed::Box::new(e) };
        check_sequence(config, seq).map_err(wrap)?;
        let emb = forward(params, config, &seq.padded(width.min(config.max_len))).map_err(wrap)?;
        out.row_mut(i).copy_from_slice(&emb);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    /// Set when either input has norm below 1e-12; `value` is then 0.
    pub degenerate: bool,
}

/// Cosine similarity accumulated in f64.
pub fn cosine<F: Scalar>(u: &[F], v: &[F]) -> Result<Cosine, EncoderError> {
    if u.len() != v.len() {
        return Err(EncoderError::DimensionMismatch(u.len(), v.len()));
    }
    let (mut uv, mut uu, mut vv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a.as_f64(), b.as_f64());
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    let (nu, nv) = (libm::sqrt(uu), libm::sqrt(vv));
    if nu < DEGENERATE_NORM || nv < DEGENERATE_NORM {
        return Ok(Cosine { value: 0.0, degenerate: true });
    }
    Ok(Cosine { value: (uv / (nu * nv)).clamp(-1.0, 1.0), degenerate: false })
}
