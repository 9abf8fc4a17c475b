//! Dual-encoder retrieval: separate message and reply towers, dot-product
//! relevance, symmetric in-batch training, and top-k serving from a fixed
//! response set.

mod encoder;
mod index;
mod loss;
pub mod synthetic;
mod train;

use thiserror::Error;

pub use encoder::{DualEncoder, DualGradients, EncoderParams, FrozenMask, Side, TextEncoder, UNK};
pub use index::{top_k, ResponseIndex, Suggestion};
pub use loss::{
    log_ratios, loss_and_score_gradient, loss_with, symmetric_loss, Objective, ScoreMatrix,
};
pub use train::{loss_gradient, train, train_from, TokenPair, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("response index was built for parameters {index} but the model is {model}; rebuild the index")]
    StaleIndex { index: String, model: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
