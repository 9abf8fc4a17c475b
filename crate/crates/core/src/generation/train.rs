use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Seq2SeqModel, Seq2SeqParams, EOS_ID, SPECIALS};
use super::GenerationError;
use crate::optim::{warmup_steps, Adam, AdamConfig};

/// Source ids and target ids; the target ends with EOS.
pub type Example = (Vec<usize>, Vec<usize>);

/// Holds optimizer state across teacher-forced steps.
#[derive(Debug, Clone)]
pub struct Trainer {
    adam: Adam,
    steps: usize,
}

impl Trainer {
    pub fn new(config: AdamConfig) -> Self {
        Trainer {
            adam: Adam::new(config),
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// One update on `batch`. Returns the mean token cross-entropy of the
    /// batch before the update.
    pub fn train_step(
        &mut self,
        model: &mut Seq2SeqModel,
        batch: &[Example],
    ) -> Result<f64, GenerationError> {
        let (loss, grads) = batch_gradient(model, batch)?;
        if !loss.is_finite() {
            return Err(GenerationError::Diverged {
                step: self.steps,
                loss,
            });
        }
        self.adam.step(model.params_mut(), &grads, &[]);
        self.steps += 1;
        if let Err(e) = check_finite(model.params()) {
            log::error!("parameters became non-finite at step {}", self.steps);
            return Err(e);
        }
        Ok(loss)
    }
}

fn check_finite(p: &Seq2SeqParams) -> Result<(), GenerationError> {
    use crate::optim::ParamBlocks;
    if p.blocks().iter().any(|b| b.iter().any(|x| !x.is_finite())) {
        return Err(GenerationError::NonFinite("model parameters"));
    }
    Ok(())
}

/// Mean token cross-entropy over the batch and its gradient.
pub fn batch_gradient(
    model: &Seq2SeqModel,
    batch: &[Example],
) -> Result<(f64, Seq2SeqParams), GenerationError> {
    if batch.is_empty() {
        return Err(GenerationError::EmptyBatch);
    }
    let tokens: usize = batch.iter().map(|(_, y)| y.len()).sum();
    let scale = 1.0 / tokens as f64;
    let mut grads = Seq2SeqParams::zeros(model.vocab().len(), model.dim());
    let mut log_prob = 0.0;
    for (x, y) in batch {
        log_prob += model.accumulate_gradient(x, y, scale, &mut grads)?;
    }
    Ok((-log_prob * scale, grads))
}

/// Fraction of target tokens that are the argmax under teacher forcing.
pub fn teacher_forced_accuracy(
    model: &Seq2SeqModel,
    examples: &[Example],
) -> Result<f64, GenerationError> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (x, y) in examples {
        let encoded = model.encode(x)?;
        let mut state = model.initial_state(&encoded);
        let mut input = super::model::BOS_ID;
        for &t in y {
            let out = model.step(&encoded, &state, input);
            let best = (0..out.log_probs.len()).fold(0, |b, i| {
                if out.log_probs[i] > out.log_probs[b] {
                    i
                } else {
                    b
                }
            });
            correct += usize::from(best == t);
            total += 1;
            state = out.state;
            input = t;
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Total log-probability and token count (EOS included) of the targets.
pub fn corpus_log_prob(
    model: &Seq2SeqModel,
    examples: &[Example],
) -> Result<(f64, usize), GenerationError> {
    let mut total = 0.0;
    let mut tokens = 0;
    for (x, y) in examples {
        total += model.sequence_log_prob(x, y)?;
        tokens += y.len();
    }
    Ok((total, tokens))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seq2SeqTrainConfig {
    pub dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub max_steps: Option<usize>,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub vocab_min_count: usize,
    pub vocab_max_size: Option<usize>,
    /// Longer sources and targets are truncated to this many tokens.
    pub max_tokens: usize,
}

impl Default for Seq2SeqTrainConfig {
    fn default() -> Self {
        Seq2SeqTrainConfig {
            dim: 64,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epochs: 1,
            max_steps: None,
            warmup_fraction: 0.01,
            seed: 0,
            vocab_min_count: 1,
            vocab_max_size: Some(20_000),
            max_tokens: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Seq2SeqOutcome {
    pub model: Seq2SeqModel,
    pub losses: Vec<f64>,
}

/// Builds a vocabulary over both sides, initialises and trains a model on
/// tokenized (message, reply) pairs.
pub fn train_seq2seq(
    pairs: &[(Vec<String>, Vec<String>)],
    config: &Seq2SeqTrainConfig,
) -> Result<Seq2SeqOutcome, GenerationError> {
    if config.batch_size == 0 || config.dim == 0 || config.max_tokens == 0 {
        return Err(GenerationError::Config(
            "batch size, width and max tokens must be positive".into(),
        ));
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(GenerationError::Config(format!(
            "invalid learning rate {}",
            config.learning_rate
        )));
    }
    if pairs.is_empty() {
        return Err(GenerationError::EmptyBatch);
    }
    let truncated: Vec<(&[String], &[String])> = pairs
        .iter()
        .map(|(m, r)| {
            (
                &m[..m.len().min(config.max_tokens)],
                &r[..r.len().min(config.max_tokens)],
            )
        })
        .collect();
    let vocab = Seq2SeqModel::build_vocab(
        truncated.iter().flat_map(|(m, r)| [*m, *r]),
        config.vocab_min_count,
        config.vocab_max_size,
    );
    let mut model = Seq2SeqModel::random(vocab, config.dim, config.seed)?;
    let examples: Vec<Example> = truncated
        .iter()
        .map(|(m, r)| (model.ids(m), model.target_ids(r)))
        .collect();
    let per_epoch = examples.len().div_ceil(config.batch_size);
    let total = config.max_steps.map_or(per_epoch * config.epochs, |m| {
        m.min(per_epoch * config.epochs)
    });
    let mut trainer = Trainer::new(AdamConfig {
        learning_rate: config.learning_rate,
        beta1: config.beta1,
        beta2: config.beta2,
        warmup_steps: warmup_steps(config.warmup_fraction, total),
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_ba7c4);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut losses = Vec::with_capacity(total);
    'epochs: for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if losses.len() == total {
                break 'epochs;
            }
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            losses.push(trainer.train_step(&mut model, &batch)?);
        }
    }
    Ok(Seq2SeqOutcome { model, losses })
}

/// Random copy examples over the model's non-special words: the target is
/// the source followed by EOS.
pub fn copy_examples(
    model: &Seq2SeqModel,
    n: usize,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Example> {
    let words = SPECIALS.len()..model.vocab().len();
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            let x: Vec<usize> = (0..len).map(|_| rng.random_range(words.clone())).collect();
            let mut y = x.clone();
            y.push(EOS_ID);
            (x, y)
        })
        .collect()
}
