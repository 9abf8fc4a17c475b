use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{DualEncoder, DualGradients, EncoderParams, FrozenMask, UNK};
use super::loss::{loss_and_score_gradient, Objective};
use super::{RetrievalError, ScoreMatrix, TextEncoder};
use crate::optim::{warmup_steps, Adam, AdamConfig};
use crate::vocab::Vocab;

/// A tokenized (message, reply) pair.
pub type TokenPair = (Vec<String>, Vec<String>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub frozen: FrozenMask,
    pub objective: Objective,
    pub dim: usize,
    pub vocab_min_count: usize,
    pub vocab_max_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epochs: 1,
            max_steps: None,
            warmup_fraction: 0.01,
            seed: 0,
            frozen: FrozenMask::default(),
            objective: Objective::LogRatio,
            dim: 64,
            vocab_min_count: 1,
            vocab_max_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let bad = |msg: String| Err(RetrievalError::Config(msg));
        if self.batch_size < 2 {
            return bad(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            ));
        }
        for b in [self.beta1, self.beta2] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("moment decay must be in [0, 1), got {b}"));
            }
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad(format!(
                "warmup fraction must be in [0, 1], got {}",
                self.warmup_fraction
            ));
        }
        if self.dim == 0 {
            return bad("embedding width must be positive".into());
        }
        Ok(())
    }

    /// Batches of at least two pairs per epoch; a trailing singleton is skipped.
    fn batches_per_epoch(&self, n: usize) -> usize {
        n / self.batch_size + usize::from(n % self.batch_size >= 2)
    }

    pub fn total_steps(&self, n: usize) -> usize {
        let full = self.epochs * self.batches_per_epoch(n);
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DualEncoder,
    /// Batch loss before each optimizer step.
    pub losses: Vec<f64>,
}

/// Mean embeddings and token ids for one side of a batch.
struct SideBatch {
    ids: Vec<Vec<usize>>,
    means: Array2<f64>,
}

fn side_batch<'a>(tower: &EncoderParams, seqs: impl Iterator<Item = &'a Vec<String>>) -> SideBatch {
    let ids: Vec<Vec<usize>> = seqs.map(|s| tower.ids(s)).collect();
    let mut means = Array2::zeros((ids.len(), tower.dim()));
    for (i, row) in ids.iter().enumerate() {
        means.row_mut(i).assign(&tower.mean_embedding(row));
    }
    SideBatch { ids, means }
}

/// Backpropagates `d_out` (gradient w.r.t. each encoded row) into one tower.
fn tower_backward(
    tower: &EncoderParams,
    batch: &SideBatch,
    d_out: &Array2<f64>,
    d_emb: &mut Array2<f64>,
    d_proj: &mut Array2<f64>,
) {
    // out_i = P · mean_i, so dP = Σ outer(d_out_i, mean_i) and dmean_i = Pᵀ d_out_i.
    *d_proj += &d_out.t().dot(&batch.means);
    let d_means = d_out.dot(tower.projection());
    for (i, ids) in batch.ids.iter().enumerate() {
        let share = &d_means.row(i) / ids.len() as f64;
        for &id in ids {
            let mut row = d_emb.row_mut(id);
            row += &share;
        }
    }
}

/// Batch loss and its exact gradient with respect to every parameter
/// block; frozen blocks get zero gradient.
pub fn loss_gradient(
    model: &DualEncoder,
    batch: &[TokenPair],
    objective: Objective,
    frozen: &FrozenMask,
) -> Result<(f64, DualGradients), RetrievalError> {
    if batch.is_empty() {
        return Err(RetrievalError::EmptyBatch);
    }
    let msg_tower = model.tower(super::Side::Message);
    let reply_tower = model.tower(super::Side::Reply);
    let msgs = side_batch(msg_tower, batch.iter().map(|p| &p.0));
    let replies = side_batch(reply_tower, batch.iter().map(|p| &p.1));
    let x = msgs.means.dot(&msg_tower.projection().t());
    let y = replies.means.dot(&reply_tower.projection().t());
    let theta = ScoreMatrix::new(x.dot(&y.t()))?;
    let (loss, g) = loss_and_score_gradient(&theta, objective);
    let dx = g.dot(&y);
    let dy = g.t().dot(&x);
    let mut grads = DualGradients::zeros_like(model);
    tower_backward(
        msg_tower,
        &msgs,
        &dx,
        &mut grads.message_embeddings,
        &mut grads.message_projection,
    );
    tower_backward(
        reply_tower,
        &replies,
        &dy,
        &mut grads.reply_embeddings,
        &mut grads.reply_projection,
    );
    grads.apply_mask(frozen);
    Ok((loss, grads))
}

fn build_vocab<'a>(seqs: impl Iterator<Item = &'a [String]>, config: &TrainConfig) -> Vocab {
    Vocab::build(
        seqs,
        &[UNK],
        UNK,
        config.vocab_min_count,
        config.vocab_max_size,
    )
}

/// Builds vocabularies from the pairs, initialises a model and trains it.
pub fn train(pairs: &[TokenPair], config: &TrainConfig) -> Result<TrainOutcome, RetrievalError> {
    config.validate()?;
    let message_vocab = build_vocab(pairs.iter().map(|p| p.0.as_slice()), config);
    let reply_vocab = build_vocab(pairs.iter().map(|p| p.1.as_slice()), config);
    let model = DualEncoder::random(message_vocab, reply_vocab, config.dim, config.seed)?;
    train_from(model, pairs, config)
}

/// Continues training an existing model.
pub fn train_from(
    mut model: DualEncoder,
    pairs: &[TokenPair],
    config: &TrainConfig,
) -> Result<TrainOutcome, RetrievalError> {
    config.validate()?;
    if pairs.len() < 2 {
        return Err(RetrievalError::Config(format!(
            "need at least 2 training pairs, got {}",
            pairs.len()
        )));
    }
    let total = config.total_steps(pairs.len());
    let mut adam = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        beta1: config.beta1,
        beta2: config.beta2,
        warmup_steps: warmup_steps(config.warmup_fraction, total),
        ..AdamConfig::default()
    });
    let frozen = config.frozen.blocks();
    // Distinct stream from parameter initialisation, which uses `seed` itself.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_ba7c4);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut losses = Vec::with_capacity(total);
    let mut batch = Vec::with_capacity(config.batch_size);
    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if losses.len() == total {
                break 'epochs;
            }
            if chunk.len() < 2 {
                continue;
            }
            batch.clear();
            batch.extend(chunk.iter().map(|&i| pairs[i].clone()));
            let step = losses.len();
            let (loss, grads) = loss_gradient(&model, &batch, config.objective, &config.frozen)
                .map_err(|_| RetrievalError::Diverged {
                    step,
                    loss: f64::NAN,
                })?;
            if !loss.is_finite() {
                return Err(RetrievalError::Diverged { step, loss });
            }
            log::trace!("epoch {epoch} step {step} loss {loss:.6}");
            losses.push(loss);
            adam.step(&mut model, &grads, &frozen);
        }
    }
    log::debug!(
        "trained {} steps, final batch loss {:.4}, params {}",
        losses.len(),
        losses.last().copied().unwrap_or(f64::NAN),
        &model.params_hash()[..12]
    );
    Ok(TrainOutcome { model, losses })
}
