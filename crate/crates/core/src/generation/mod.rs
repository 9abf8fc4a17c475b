//! Recurrent encoder-decoder with attention: teacher-forced training and
//! beam-search decoding of replies.

mod beam;
mod model;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use beam::{beam_search, emittable, greedy_decode, DecodeConfig, Hypothesis};
pub use model::{
    EncodedInput, Seq2SeqModel, Seq2SeqParams, StepOutput, BOS, BOS_ID, EOS, EOS_ID, PAD, PAD_ID,
    SPECIALS, UNK, UNK_ID,
};
pub use train::{
    batch_gradient, copy_examples, corpus_log_prob, teacher_forced_accuracy, train_seq2seq,
    Example, Seq2SeqOutcome, Seq2SeqTrainConfig, Trainer,
};

use crate::optim::AdamConfig;
use crate::vocab::Vocab;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("token id {0} is outside the vocabulary")]
    OutOfVocab(usize),
    #[error("target sequence must end with EOS")]
    MissingEos,
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Words of the copy task.
pub const COPY_WORDS: usize = 10;
/// Longest copy-task message.
pub const COPY_MAX_LEN: usize = 5;

/// Fresh model over the copy-task vocabulary (`COPY_WORDS` words plus the
/// specials).
pub fn copy_task_model(d: usize, seed: u64) -> Seq2SeqModel {
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend((0..COPY_WORDS).map(|i| format!("t{i}")));
    let vocab = Vocab::from_tokens(tokens, UNK).expect("distinct tokens");
    Seq2SeqModel::random(vocab, d, seed).expect("valid shapes")
}

#[derive(Debug, Clone)]
pub struct CopyRun {
    pub model: Seq2SeqModel,
    pub losses: Vec<f64>,
    /// Teacher-forced per-token accuracy on fresh held-out examples.
    pub accuracy: f64,
}

/// Trains on freshly sampled copy batches for `steps` steps.
pub fn run_copy_task(
    steps: usize,
    batch_size: usize,
    d: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<CopyRun, GenerationError> {
    let mut model = copy_task_model(d, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut trainer = Trainer::new(AdamConfig {
        learning_rate,
        ..AdamConfig::default()
    });
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let batch = copy_examples(&model, batch_size, COPY_MAX_LEN, &mut rng);
        losses.push(trainer.train_step(&mut model, &batch)?);
    }
    let held_out = copy_examples(
        &model,
        500,
        COPY_MAX_LEN,
        &mut ChaCha8Rng::seed_from_u64(seed ^ 0xdead_beef),
    );
    let accuracy = teacher_forced_accuracy(&model, &held_out)?;
    Ok(CopyRun {
        model,
        losses,
        accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copy_task_learns() {
        let run = run_copy_task(2000, 32, 32, 1e-2, 0).unwrap();
        assert!(run.accuracy >= 0.95, "accuracy {}", run.accuracy);
    }

    #[test]
    fn fixed_batch_loss_strictly_decreases_for_50_steps() {
        let mut model = copy_task_model(32, 0);
        let batch = copy_examples(&model, 32, COPY_MAX_LEN, &mut ChaCha8Rng::seed_from_u64(1));
        let mut trainer = Trainer::new(AdamConfig {
            learning_rate: 1e-2,
            ..AdamConfig::default()
        });
        let losses: Vec<f64> = (0..51)
            .map(|_| trainer.train_step(&mut model, &batch).unwrap())
            .collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }
}
