//! Adam with linear learning-rate warmup, over named flat parameter blocks.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Steps over which the rate ramps linearly from lr/warmup up to lr.
    pub warmup_steps: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            warmup_steps: 0,
        }
    }
}

/// Warmup steps for a run: `ceil(fraction * total_steps)`.
pub fn warmup_steps(fraction: f64, total_steps: usize) -> usize {
    (fraction * total_steps as f64).ceil() as usize
}

/// Anything exposing its parameters as an ordered list of flat blocks.
pub trait ParamBlocks {
    fn blocks(&self) -> Vec<&[f64]>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: usize,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Learning rate the next step will use.
    pub fn current_lr(&self) -> f64 {
        let w = self.config.warmup_steps;
        if w == 0 || self.steps >= w {
            self.config.learning_rate
        } else {
            self.config.learning_rate * (self.steps + 1) as f64 / w as f64
        }
    }

    /// One update. `frozen[i]` skips block `i` entirely (its moments stay zero).
    pub fn step<P: ParamBlocks + ?Sized, G: ParamBlocks + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &G,
        frozen: &[bool],
    ) {
        let lr = self.current_lr();
        self.steps += 1;
        let t = self.steps as i32;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let grads = grads.blocks();
        let mut params = params.blocks_mut();
        assert_eq!(
            params.len(),
            grads.len(),
            "parameter/gradient block count mismatch"
        );
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        }
        for (i, (p, g)) in params.iter_mut().zip(&grads).enumerate() {
            if frozen.get(i).copied().unwrap_or(false) {
                continue;
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}
