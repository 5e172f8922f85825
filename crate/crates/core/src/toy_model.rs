//! A bigram language model over a small vocabulary.
//!
//! It plays the role of the target generative model: it yields a per-sample
//! loss (mean next-token negative log-likelihood) and its exact gradient with
//! respect to the `V x V` logit table.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::feature_store::FeatureMatrix;
use crate::jsonl;
use crate::math::{log_sum_exp, softmax};

/// One tokenized training sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSample {
    pub id: String,
    pub tokens: Vec<u32>,
}

impl TokenSample {
    pub fn new(id: impl Into<String>, tokens: Vec<u32>) -> Self {
        Self {
            id: id.into(),
            tokens,
        }
    }

    pub fn validate(&self, vocab: usize) -> Result<()> {
        if self.tokens.len() < 2 {
            return Err(invalid(format!(
                "sample {:?} has {} tokens, need at least 2",
                self.id,
                self.tokens.len()
            )));
        }
        if let Some(&t) = self.tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(invalid(format!(
                "sample {:?} has token {t} outside vocabulary of size {vocab}",
                self.id
            )));
        }
        Ok(())
    }

    fn transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.tokens
            .windows(2)
            .map(|w| (w[0] as usize, w[1] as usize))
    }
}

pub fn load_tokens(path: impl AsRef<Path>) -> Result<Vec<TokenSample>> {
    let samples: Vec<TokenSample> = jsonl::read(path)?;
    crate::feature_store::check_unique_ids(samples.iter().map(|s| s.id.as_str()))?;
    Ok(samples)
}

pub fn save_tokens(samples: &[TokenSample], path: impl AsRef<Path>) -> Result<()> {
    jsonl::write(path, samples)
}

/// A dense `V x V` array indexed `[context][next]`, used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrad {
    vocab: usize,
    data: Vec<f64>,
}

impl LogitGrad {
    pub fn zeros(vocab: usize) -> Self {
        Self {
            vocab,
            data: vec![0.0; vocab * vocab],
        }
    }

    pub fn from_vec(vocab: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != vocab * vocab {
            return Err(invalid(format!(
                "gradient has {} entries, expected {vocab}x{vocab}",
                data.len()
            )));
        }
        Ok(Self { vocab, data })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn get(&self, context: usize, next: usize) -> f64 {
        self.data[context * self.vocab + next]
    }

    pub fn row(&self, context: usize) -> &[f64] {
        &self.data[context * self.vocab..(context + 1) * self.vocab]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyBigramModel {
    vocab: usize,
    logits: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    vocab_size: usize,
}

impl ToyBigramModel {
    /// All-zero logits: every next token equally likely.
    pub fn uniform(vocab: usize) -> Result<Self> {
        Self::from_logits(vocab, vec![0.0; vocab * vocab])
    }

    pub fn from_logits(vocab: usize, logits: Vec<f64>) -> Result<Self> {
        if vocab < 2 {
            return Err(invalid(format!(
                "vocabulary size must be >= 2, got {vocab}"
            )));
        }
        if logits.len() != vocab * vocab {
            return Err(invalid(format!(
                "logit table has {} entries, expected {vocab}x{vocab}",
                logits.len()
            )));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(invalid("logit table contains non-finite values"));
        }
        Ok(Self { vocab, logits })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn row(&self, context: usize) -> &[f64] {
        &self.logits[context * self.vocab..(context + 1) * self.vocab]
    }

    /// Mean next-token negative log-likelihood of `sample`, in nats per token.
    pub fn sample_loss(&self, sample: &TokenSample) -> Result<f64> {
        sample.validate(self.vocab)?;
        let total: f64 = sample
            .transitions()
            .map(|(u, v)| {
                let row = self.row(u);
                log_sum_exp(row) - row[v]
            })
            .sum();
        // -log softmax is >= 0 mathematically; clear rounding residue
        Ok((total / (sample.tokens.len() - 1) as f64).max(0.0))
    }

    pub fn sample_grad(&self, sample: &TokenSample) -> Result<LogitGrad> {
        let mut grad = LogitGrad::zeros(self.vocab);
        self.accumulate_grad(sample, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Adds `coeff * sample_grad(sample)` into `grad`.
    pub(crate) fn accumulate_grad(
        &self,
        sample: &TokenSample,
        coeff: f64,
        grad: &mut LogitGrad,
    ) -> Result<()> {
        sample.validate(self.vocab)?;
        let scale = coeff / (sample.tokens.len() - 1) as f64;
        let v_len = self.vocab;
        for (u, v) in sample.transitions() {
            let probs = softmax(self.row(u));
            let out = &mut grad.data[u * v_len..(u + 1) * v_len];
            for (w, p) in probs.into_iter().enumerate() {
                let target = if w == v { 1.0 } else { 0.0 };
                out[w] += scale * (p - target);
            }
        }
        Ok(())
    }

    /// Plain gradient-descent step `theta - lr * gradient`.
    pub fn step(&self, gradient: &LogitGrad, lr: f64) -> Result<Self> {
        if gradient.vocab != self.vocab {
            return Err(invalid(format!(
                "gradient vocabulary {} does not match model vocabulary {}",
                gradient.vocab, self.vocab
            )));
        }
        let logits = self
            .logits
            .iter()
            .zip(&gradient.data)
            .map(|(t, g)| t - lr * g)
            .collect();
        Self::from_logits(self.vocab, logits)
    }

    pub fn mean_loss(&self, samples: &[TokenSample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(invalid("cannot evaluate on an empty sample set"));
        }
        let mut total = 0.0;
        for s in samples {
            total += self.sample_loss(s)?;
        }
        Ok(total / samples.len() as f64)
    }

    /// Writes the logit table as an SFFM matrix plus a `<path>.json` sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let matrix = FeatureMatrix::new(self.vocab, self.vocab, self.logits.clone())?;
        crate::feature_store::save_features(&matrix, path)?;
        let sidecar = sidecar_path(path);
        let json = serde_json::to_string(&Sidecar {
            vocab_size: self.vocab,
        })
        .expect("sidecar serializes");
        std::fs::write(&sidecar, json).map_err(|e| Error::storage(&sidecar, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let matrix = crate::feature_store::load_features(path)?;
        let sidecar = sidecar_path(path);
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::storage(&sidecar, e))?;
        let meta: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: sidecar.clone(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if matrix.n() != meta.vocab_size || matrix.d() != meta.vocab_size {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!(
                    "checkpoint is {}x{} but sidecar declares vocab_size {}",
                    matrix.n(),
                    matrix.d(),
                    meta.vocab_size
                ),
            });
        }
        Self::from_logits(meta.vocab_size, matrix.as_slice().to_vec())
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Seeded epoch-wise shuffles: each call yields a permutation of `0..n`.
pub(crate) struct EpochShuffler {
    rng: ChaCha8Rng,
    n: usize,
}

impl EpochShuffler {
    pub(crate) fn new(n: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            n,
        }
    }

    pub(crate) fn next_order(&mut self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut self.rng);
        order
    }
}

/// Accumulates `sum_i coeffs[i] * grad(batch[i])` into `grad`.
pub(crate) fn weighted_model_grad(
    model: &ToyBigramModel,
    batch: &[&TokenSample],
    coeffs: &[f64],
    grad: &mut LogitGrad,
) -> Result<()> {
    for (s, &c) in batch.iter().zip(coeffs) {
        model.accumulate_grad(s, c, grad)?;
    }
    Ok(())
}

/// Evaluates a trained model on a fixed held-out set.
#[derive(Debug, Clone)]
pub struct HeldOutEvaluator {
    model: ToyBigramModel,
}

impl HeldOutEvaluator {
    pub fn mean_loss(&self, held_out: &[TokenSample]) -> Result<f64> {
        self.model.mean_loss(held_out)
    }
}

/// Unweighted minibatch SGD on `samples`, shuffled per epoch from `seed`.
pub fn train_plain(
    model: ToyBigramModel,
    samples: &[TokenSample],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<(ToyBigramModel, HeldOutEvaluator)> {
    if samples.is_empty() {
        return Err(invalid("cannot train on an empty dataset"));
    }
    if batch_size == 0 {
        return Err(invalid("batch size must be >= 1"));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(invalid(format!("learning rate must be positive, got {lr}")));
    }
    for s in samples {
        s.validate(model.vocab())?;
    }
    let mut model = model;
    let mut shuffler = EpochShuffler::new(samples.len(), seed);
    for _ in 0..epochs {
        let order = shuffler.next_order();
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&TokenSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let coeffs = crate::score_net::softmax_weights(&vec![0.0; batch.len()])?;
            let mut grad = LogitGrad::zeros(model.vocab());
            weighted_model_grad(&model, &batch, &coeffs, &mut grad)?;
            model = model.step(&grad, lr)?;
        }
    }
    let evaluator = HeldOutEvaluator {
        model: model.clone(),
    };
    Ok((model, evaluator))
}
