use std::cmp::Ordering;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::model::{EncodedInput, Seq2SeqModel, BOS_ID, EOS_ID, SPECIALS, UNK_ID};
use super::GenerationError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam_width: usize,
    /// Most non-EOS tokens a reply may have; EOS is forced after that.
    pub max_len: usize,
    /// Scores are `log_prob / len^alpha`; 0 disables length normalization.
    pub alpha: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_width: 3,
            max_len: 32,
            alpha: 0.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.beam_width == 0 || self.max_len == 0 {
            return Err(GenerationError::Config(
                "beam width and max length must be at least 1".into(),
            ));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(GenerationError::Config(format!(
                "length exponent must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hypothesis {
    /// Generated ids; a finished hypothesis ends with EOS.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    pub fn score(&self, alpha: f64) -> f64 {
        if alpha == 0.0 {
            self.log_prob
        } else {
            self.log_prob / (self.tokens.len().max(1) as f64).powf(alpha)
        }
    }
}

/// Tokens the decoder may emit: everything except PAD, BOS and UNK.
pub fn emittable(model: &Seq2SeqModel) -> impl Iterator<Item = usize> {
    (0..model.vocab().len()).filter(|&id| id == EOS_ID || id >= SPECIALS.len() && id != UNK_ID)
}

struct Live {
    hyp: Hypothesis,
    state: Array1<f64>,
}

/// Higher score first, then the lexicographically smaller token sequence.
fn rank(a: &Hypothesis, b: &Hypothesis, alpha: f64) -> Ordering {
    b.score(alpha)
        .total_cmp(&a.score(alpha))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search over `p(y | x)`. Every live hypothesis is extended by every
/// emittable token; finished ones stay in the pool and compete for the
/// `beam_width` slots. Hypotheses that reach `max_len` tokens get EOS
/// appended with its model probability. Stops once the whole beam is
/// finished and returns it, best first.
pub fn beam_search(
    model: &Seq2SeqModel,
    source: &[usize],
    config: &DecodeConfig,
) -> Result<Vec<Hypothesis>, GenerationError> {
    config.validate()?;
    let encoded = model.encode(source)?;
    let tokens: Vec<usize> = emittable(model).collect();
    let mut beam = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        },
        state: model.initial_state(&encoded),
    }];
    while beam.iter().any(|l| !l.hyp.finished) {
        let mut pool: Vec<Live> = Vec::with_capacity(beam.len() * tokens.len());
        for live in beam {
            if live.hyp.finished {
                pool.push(live);
                continue;
            }
            let input = live.hyp.tokens.last().copied().unwrap_or(BOS_ID);
            let out = model.step(&encoded, &live.state, input);
            let choices: &[usize] = if live.hyp.tokens.len() >= config.max_len {
                &[EOS_ID]
            } else {
                &tokens
            };
            for &t in choices {
                let mut next = live.hyp.tokens.clone();
                next.push(t);
                pool.push(Live {
                    hyp: Hypothesis {
                        tokens: next,
                        log_prob: live.hyp.log_prob + out.log_probs[t],
                        finished: t == EOS_ID,
                    },
                    state: out.state.clone(),
                });
            }
        }
        pool.sort_by(|a, b| rank(&a.hyp, &b.hyp, config.alpha));
        pool.truncate(config.beam_width);
        beam = pool;
    }
    Ok(beam.into_iter().map(|l| l.hyp).collect())
}

/// Picks the most probable emittable token at every step (lowest id on
/// ties) until EOS or `max_len` tokens, then forces EOS.
pub fn greedy_decode(
    model: &Seq2SeqModel,
    source: &[usize],
    max_len: usize,
) -> Result<Hypothesis, GenerationError> {
    let encoded: EncodedInput = model.encode(source)?;
    let tokens: Vec<usize> = emittable(model).collect();
    let mut state = model.initial_state(&encoded);
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while !hyp.finished {
        let input = hyp.tokens.last().copied().unwrap_or(BOS_ID);
        let out = model.step(&encoded, &state, input);
        let best = if hyp.tokens.len() >= max_len {
            EOS_ID
        } else {
            tokens.iter().copied().fold(tokens[0], |best, t| {
                if out.log_probs[t] > out.log_probs[best] {
                    t
                } else {
                    best
                }
            })
        };
        hyp.tokens.push(best);
        hyp.log_prob += out.log_probs[best];
        hyp.finished = best == EOS_ID;
        state = out.state;
    }
    Ok(hyp)
}
