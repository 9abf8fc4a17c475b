//! Symmetric in-batch softmax loss over a score matrix.
//!
//! For row i the denominator sums `exp(Θ[i][j])` over the whole row plus
//! `exp(Θ[j][i])` over the column without the diagonal, so each pair is
//! scored against both the other replies and the other messages.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::RetrievalError;

/// Square batch score matrix, `values[i][j] = Φx(x_i) · Φy(y_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    values: Array2<f64>,
}

impl ScoreMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self, RetrievalError> {
        let (r, c) = values.dim();
        if r != c {
            return Err(RetrievalError::Shape(format!(
                "score matrix is {r}x{c}, expected square"
            )));
        }
        if r == 0 {
            return Err(RetrievalError::EmptyBatch);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite("score matrix"));
        }
        Ok(ScoreMatrix { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn transpose(&self) -> ScoreMatrix {
        ScoreMatrix {
            values: self.values.t().to_owned(),
        }
    }
}

/// Which per-pair quantity the objective averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Mean of `-log r_i`.
    #[default]
    LogRatio,
    /// Negative mean of the raw ratios `r_i`.
    RawRatio,
}

/// `log D_i` for every row, with the max of the row and column subtracted
/// before exponentiating. Off-diagonal terms are summed as
/// `exp(Θij - m) + exp(Θji - m)` so transposing Θ gives bit-identical sums.
fn log_denominators(theta: &Array2<f64>) -> Vec<f64> {
    let n = theta.nrows();
    (0..n)
        .map(|i| {
            let m = (0..n).fold(f64::NEG_INFINITY, |m, j| {
                m.max(theta[[i, j]]).max(theta[[j, i]])
            });
            let sum: f64 = (0..n)
                .map(|j| {
                    if j == i {
                        (theta[[i, i]] - m).exp()
                    } else {
                        (theta[[i, j]] - m).exp() + (theta[[j, i]] - m).exp()
                    }
                })
                .sum();
            m + sum.ln()
        })
        .collect()
}

/// Per-pair log ratios `log r_i = Θii - log D_i`, each ≤ 0.
pub fn log_ratios(theta: &ScoreMatrix) -> Vec<f64> {
    let v = &theta.values;
    log_denominators(v)
        .iter()
        .enumerate()
        .map(|(i, ld)| (v[[i, i]] - ld).min(0.0))
        .collect()
}

/// The default (log-ratio) loss.
pub fn symmetric_loss(theta: &ScoreMatrix) -> f64 {
    loss_with(theta, Objective::LogRatio)
}

pub fn loss_with(theta: &ScoreMatrix, objective: Objective) -> f64 {
    let n = theta.n() as f64;
    let logs = log_ratios(theta);
    match objective {
        Objective::LogRatio => -logs.iter().sum::<f64>() / n,
        Objective::RawRatio => -logs.iter().map(|l| l.exp()).sum::<f64>() / n,
    }
}

/// Loss and its gradient with respect to every entry of Θ.
pub fn loss_and_score_gradient(theta: &ScoreMatrix, objective: Objective) -> (f64, Array2<f64>) {
    let v = &theta.values;
    let n = theta.n();
    let inv_n = 1.0 / n as f64;
    let log_d = log_denominators(v);
    let ratio: Vec<f64> = (0..n).map(|i| (v[[i, i]] - log_d[i]).exp()).collect();
    let mut grad = Array2::zeros((n, n));
    for a in 0..n {
        for b in 0..n {
            let via_a = (v[[a, b]] - log_d[a]).exp();
            let via_b = if a == b {
                0.0
            } else {
                (v[[a, b]] - log_d[b]).exp()
            };
            grad[[a, b]] = match objective {
                Objective::LogRatio => inv_n * (via_a + via_b - if a == b { 1.0 } else { 0.0 }),
                Objective::RawRatio if a == b => -inv_n * ratio[a] * (1.0 - ratio[a]),
                Objective::RawRatio => inv_n * (ratio[a] * via_a + ratio[b] * via_b),
            };
        }
    }
    (loss_with(theta, objective), grad)
}
