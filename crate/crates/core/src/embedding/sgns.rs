//! Skip-gram negative-sampling objective and trainer.
//!
//! For a (center, context) pair with sampled negatives the loss is
//!
//! ```text
//! L = -ln sigma(u_o . v_c) - sum_k ln sigma(-u_k . v_c)
//! ```
//!
//! where `v_c` is the center's input vector, `u_o` the context's output
//! vector and `u_k` the negatives' output vectors. [`pair_loss`] and
//! [`pair_gradients`] expose that objective as pure f64 functions; the
//! trainer applies exactly the same gradients with reusable buffers.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::TokenSequence;
use crate::embedding::{build_vocab, EmbeddingError, EmbeddingModel, TrainConfig, VocabEntry};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x), computed without overflow; -ln sigma(x) = softplus(-x).
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (1.0 + (-x.abs()).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss of one (center, context, negatives) triple.
pub fn pair_loss(center: &[f64], positive: &[f64], negatives: &[Vec<f64>]) -> f64 {
    let mut loss = softplus(-dot(center, positive));
    for negative in negatives {
        loss += softplus(dot(center, negative));
    }
    loss
}

/// Analytic gradients of [`pair_loss`] with respect to every input.
#[derive(Debug, Clone)]
pub struct PairGradients {
    pub d_center: Vec<f64>,
    pub d_positive: Vec<f64>,
    pub d_negatives: Vec<Vec<f64>>,
}

pub fn pair_gradients(center: &[f64], positive: &[f64], negatives: &[Vec<f64>]) -> PairGradients {
    let dim = center.len();
    let g_pos = sigmoid(dot(center, positive)) - 1.0;

    let mut d_center = vec![0.0; dim];
    for (d, &u) in d_center.iter_mut().zip(positive) {
        *d += g_pos * u;
    }
    let d_positive: Vec<f64> = center.iter().map(|&v| g_pos * v).collect();

    let mut d_negatives = Vec::with_capacity(negatives.len());
    for negative in negatives {
        let g_neg = sigmoid(dot(center, negative));
        for (d, &u) in d_center.iter_mut().zip(negative) {
            *d += g_neg * u;
        }
        d_negatives.push(center.iter().map(|&v| g_neg * v).collect());
    }

    PairGradients {
        d_center,
        d_positive,
        d_negatives,
    }
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Average pair loss per epoch, in epoch order.
    pub epoch_avg_loss: Vec<f64>,
    pub pairs_trained: u64,
}

/// Cumulative unigram^0.75 weights for negative sampling.
struct NegativeTable {
    cumulative: Vec<f64>,
    total: f64,
}

impl NegativeTable {
    fn new(vocab: &[VocabEntry]) -> NegativeTable {
        let mut cumulative = Vec::with_capacity(vocab.len());
        let mut total = 0.0;
        for entry in vocab {
            total += (entry.frequency as f64).powf(0.75);
            cumulative.push(total);
        }
        NegativeTable { cumulative, total }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u32 {
        let r = rng.gen::<f64>() * self.total;
        self.cumulative.partition_point(|&c| c <= r) as u32
    }
}

/// Trains a skip-gram negative-sampling model. Deterministic for a fixed
/// seed; the RNG drives vector initialization, frequent-word sub-sampling,
/// dynamic window shrinking, and negative draws in one fixed order.
pub fn train(
    corpus: &[TokenSequence],
    config: &TrainConfig,
) -> Result<EmbeddingModel, EmbeddingError> {
    train_with_report(corpus, config).map(|(model, _)| model)
}

pub fn train_with_report(
    corpus: &[TokenSequence],
    config: &TrainConfig,
) -> Result<(EmbeddingModel, TrainReport), EmbeddingError> {
    config.validate()?;
    let vocab = build_vocab(corpus, config.min_count)?;
    let index: HashMap<&str, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, entry)| (entry.term.as_str(), i as u32))
        .collect();

    let sentences: Vec<Vec<u32>> = corpus
        .iter()
        .map(|sequence| {
            sequence
                .tokens
                .iter()
                .filter_map(|t| index.get(t.as_str()).copied())
                .collect()
        })
        .collect();
    let total_tokens: usize = sentences.iter().map(Vec::len).sum();
    let required = config.window + 1;
    if total_tokens < required {
        return Err(EmbeddingError::CorpusTooShort {
            retained: total_tokens,
            required,
        });
    }

    let dim = config.dim;
    let vocab_size = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut input = vec![0.0f64; vocab_size * dim];
    for value in &mut input {
        *value = (rng.gen::<f64>() - 0.5) / dim as f64;
    }
    let mut output = vec![0.0f64; vocab_size * dim];

    let table = NegativeTable::new(&vocab);
    let train_total = (total_tokens * config.epochs) as f64;
    let mut processed: u64 = 0;

    let mut report = TrainReport::default();
    let mut kept: Vec<u32> = Vec::new();
    let mut d_center = vec![0.0f64; dim];
    let mut neg_rows: Vec<u32> = Vec::new();
    let mut neg_gs: Vec<f64> = Vec::new();

    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0f64;
        let mut epoch_pairs: u64 = 0;

        for sentence in &sentences {
            kept.clear();
            for &id in sentence {
                processed += 1;
                if config.subsample_threshold > 0.0 {
                    let f = vocab[id as usize].frequency as f64;
                    let k = config.subsample_threshold * total_tokens as f64;
                    let keep_prob = ((f / k).sqrt() + 1.0) * k / f;
                    if rng.gen::<f64>() >= keep_prob {
                        continue;
                    }
                }
                kept.push(id);
            }
            let alpha = config.learning_rate_initial
                * (1.0 - processed as f64 / (train_total + 1.0)).max(1e-4);

            for i in 0..kept.len() {
                let center = kept[i] as usize;
                let w = config.window - rng.gen_range(0..config.window);
                let lo = i.saturating_sub(w);
                let hi = (i + w).min(kept.len().saturating_sub(1));
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let context = kept[j];

                    neg_rows.clear();
                    for _ in 0..config.negatives {
                        let sampled = table.sample(&mut rng);
                        if sampled != context {
                            neg_rows.push(sampled);
                        }
                    }

                    // Dots from the pre-update snapshot.
                    let v_c = &input[center * dim..(center + 1) * dim];
                    let u_o = &output[context as usize * dim..(context as usize + 1) * dim];
                    let pos_dot = dot(v_c, u_o);
                    let g_pos = sigmoid(pos_dot) - 1.0;
                    let mut loss = softplus(-pos_dot);

                    d_center.fill(0.0);
                    for (d, &u) in d_center.iter_mut().zip(u_o) {
                        *d += g_pos * u;
                    }
                    neg_gs.clear();
                    for &neg in &neg_rows {
                        let u_k = &output[neg as usize * dim..(neg as usize + 1) * dim];
                        let neg_dot = dot(v_c, u_k);
                        loss += softplus(neg_dot);
                        let g_neg = sigmoid(neg_dot);
                        for (d, &u) in d_center.iter_mut().zip(u_k) {
                            *d += g_neg * u;
                        }
                        neg_gs.push(g_neg);
                    }

                    // Output rows step against the still-unmodified center row.
                    for d in 0..dim {
                        output[context as usize * dim + d] -= alpha * g_pos * input[center * dim + d];
                    }
                    for (slot, &neg) in neg_rows.iter().enumerate() {
                        let g_neg = neg_gs[slot];
                        for d in 0..dim {
                            output[neg as usize * dim + d] -= alpha * g_neg * input[center * dim + d];
                        }
                    }
                    for d in 0..dim {
                        input[center * dim + d] -= alpha * d_center[d];
                    }

                    epoch_loss += loss;
                    epoch_pairs += 1;
                }
            }
        }

        let avg = epoch_loss / epoch_pairs.max(1) as f64;
        if !avg.is_finite() {
            return Err(EmbeddingError::NonFiniteLoss(epoch + 1));
        }
        report.epoch_avg_loss.push(avg);
        report.pairs_trained += epoch_pairs;
        log::debug!("epoch {}: avg pair loss {avg:.6}", epoch + 1);
    }

    let input_f32: Vec<f32> = input.into_iter().map(|v| v as f32).collect();
    let output_f32: Vec<f32> = output.into_iter().map(|v| v as f32).collect();
    let model =
        EmbeddingModel::from_parts(vocab, dim, input_f32, output_f32, Some(config.clone()));
    Ok((model, report))
}

/// Average pair loss of a trained model over a corpus slice, with fixed-size
/// windows, no sub-sampling, and seeded negative draws. Intended for held-out
/// validation.
pub fn evaluate_loss(
    model: &EmbeddingModel,
    corpus: &[TokenSequence],
    window: usize,
    negatives: usize,
    seed: u64,
) -> Result<f64, EmbeddingError> {
    let dim = model.dim();
    let index: HashMap<&str, u32> = model
        .vocab()
        .iter()
        .enumerate()
        .map(|(i, entry)| (entry.term.as_str(), i as u32))
        .collect();
    let table = NegativeTable::new(model.vocab());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut total_loss = 0.0;
    let mut pairs: u64 = 0;
    let mut center_buf = vec![0.0f64; dim];
    let mut other_buf = vec![0.0f64; dim];

    for sequence in corpus {
        let ids: Vec<u32> = sequence
            .tokens
            .iter()
            .filter_map(|t| index.get(t.as_str()).copied())
            .collect();
        for i in 0..ids.len() {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(ids.len().saturating_sub(1));
            for j in lo..=hi {
                if j == i {
                    continue;
                }
                for (buf, value) in center_buf.iter_mut().zip(model.input_row(ids[i] as usize)) {
                    *buf = *value as f64;
                }
                for (buf, value) in other_buf.iter_mut().zip(model.output_row(ids[j] as usize)) {
                    *buf = *value as f64;
                }
                let mut loss = softplus(-dot(&center_buf, &other_buf));
                for _ in 0..negatives {
                    let sampled = table.sample(&mut rng);
                    if sampled == ids[j] {
                        continue;
                    }
                    for (buf, value) in
                        other_buf.iter_mut().zip(model.output_row(sampled as usize))
                    {
                        *buf = *value as f64;
                    }
                    loss += softplus(dot(&center_buf, &other_buf));
                }
                total_loss += loss;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(EmbeddingError::CorpusTooShort {
            retained: 0,
            required: 2,
        });
    }
    Ok(total_loss / pairs as f64)
}
