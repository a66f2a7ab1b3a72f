//! Reverse-mode gradients against central finite differences in f64.

use talentmatch_core::encoder::{forward, EncoderConfig, EncoderParams};
use talentmatch_core::textprep::{TokenSequence, BOS, EOS, PAD};
use talentmatch_core::training::{grad, pair_loss, PairExample, SimilarityHead};

const H: f64 = 1e-4;
pub const TOL: f64 = 1e-4;

fn config() -> EncoderConfig {
    EncoderConfig { vocab_size: 16, d_model: 8, n_layers: 1, n_heads: 2, d_ff: 16, max_len: 32 }
}

fn seq(content: &[u32], pad: usize) -> TokenSequence {
    let mut ids = vec![BOS];
    ids.extend_from_slice(content);
    ids.push(EOS);
    ids.extend(std::iter::repeat_n(PAD, pad));
    TokenSequence::from_ids(ids)
}

fn batch_loss(params: &EncoderParams<f64>, head: &SimilarityHead<f64>, cfg: &EncoderConfig, batch: &[PairExample<'_>]) -> f64 {
    let mut total = 0.0;
    for ex in batch {
        let u = forward(params, cfg, ex.cv).unwrap();
        let v = forward(params, cfg, ex.vacancy).unwrap();
        total += pair_loss(&u, &v, ex.y, head).unwrap().loss;
    }
    total / batch.len() as f64
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

pub struct Worst {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub err: f64,
    pub checked: usize,
}

/// Checks every encoder coordinate plus tau and b on a fixed four-pair batch
/// and returns the worst relative error.
pub fn worst_gradient_error() -> Worst {
    let cfg = config();
    let mut params = EncoderParams::<f64>::xavier(&cfg, 11);
    // non-trivial norm parameters and biases so their gradients are exercised
    for (k, t) in params.tensors_mut().into_iter().enumerate() {
        if t.shape().0 == 1 {
            for (i, x) in t.as_mut_slice().iter_mut().enumerate() {
                *x += 0.1 * (((k * 7 + i * 3) % 11) as f64 / 11.0 - 0.5);
            }
        }
    }
    let mut head = SimilarityHead { tau: 3.0, bias: -0.4 };
    let seqs = [seq(&[4, 5, 6, 7], 0), seq(&[8, 9, 4], 2), seq(&[10, 11, 12, 13, 14], 0), seq(&[15, 5], 1), seq(&[], 0)];
    let batch = [
        PairExample { cv: &seqs[0], vacancy: &seqs[1], y: 1 },
        PairExample { cv: &seqs[2], vacancy: &seqs[1], y: 0 },
        PairExample { cv: &seqs[3], vacancy: &seqs[4], y: 1 },
        PairExample { cv: &seqs[0], vacancy: &seqs[3], y: 0 },
    ];

    let (g, loss) = grad(&params, &head, &cfg, &batch).unwrap();
    assert!((loss - batch_loss(&params, &head, &cfg, &batch)).abs() < 1e-12);

    let names = params.tensor_names();
    let analytic: Vec<Vec<f64>> = g.encoder.tensors().iter().map(|t| t.as_slice().to_vec()).collect();
    let mut worst = Worst { name: String::new(), index: 0, analytic: 0.0, numeric: 0.0, err: 0.0, checked: 0 };
    let mut checked = 0;
    for (k, name) in names.iter().enumerate() {
        for i in 0..analytic[k].len() {
            let orig = params.tensors()[k].as_slice()[i];
            params.tensors_mut()[k].as_mut_slice()[i] = orig + H;
            let up = batch_loss(&params, &head, &cfg, &batch);
            params.tensors_mut()[k].as_mut_slice()[i] = orig - H;
            let down = batch_loss(&params, &head, &cfg, &batch);
            params.tensors_mut()[k].as_mut_slice()[i] = orig;
            let numeric = (up - down) / (2.0 * H);
            let err = rel_err(analytic[k][i], numeric);
            if err > worst.err {
                worst = Worst { name: name.clone(), index: i, analytic: analytic[k][i], numeric, err, checked: 0 };
            }
            checked += 1;
        }
    }

    let head_slots: [(&str, f64, fn(&mut SimilarityHead<f64>) -> &mut f64); 2] =
        [("tau", g.tau, |h| &mut h.tau), ("bias", g.bias, |h| &mut h.bias)];
    for (name, analytic, slot) in head_slots {
        let orig = *slot(&mut head);
        *slot(&mut head) = orig + H;
        let up = batch_loss(&params, &head, &cfg, &batch);
        *slot(&mut head) = orig - H;
        let down = batch_loss(&params, &head, &cfg, &batch);
        *slot(&mut head) = orig;
        let numeric = (up - down) / (2.0 * H);
        let err = rel_err(analytic, numeric);
        if err > worst.err {
            worst = Worst { name: name.into(), index: 0, analytic, numeric, err, checked: 0 };
        }
        checked += 1;
    }
    worst.checked = checked;
    worst
}
