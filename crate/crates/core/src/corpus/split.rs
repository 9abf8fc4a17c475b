//! Seeded train/valid/test partitioning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for r in [self.train, self.valid, self.test] {
            if !(r > 0.0 && r < 1.0) {
                return Err(CorpusError::Config(format!(
                    "split ratios must be in (0, 1), got {r}"
                )));
            }
        }
        let sum = self.train + self.valid + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::Config(format!(
                "split ratios sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// (train, valid, test) sizes for `n` items. Valid and test are rounded
    /// down and the remainder goes to train, unless that leaves train more
    /// than one item above its exact share; then the split with the larger
    /// fractional part takes one item back.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The epsilon absorbs representation error such as 10 * 0.1.
        let exact_valid = n as f64 * self.valid + 1e-9;
        let exact_test = n as f64 * self.test + 1e-9;
        let mut valid = exact_valid.floor() as usize;
        let mut test = exact_test.floor() as usize;
        let excess = (n - valid - test) as f64 - n as f64 * self.train;
        if excess > 1.0 + 1e-9 {
            if exact_valid.fract() >= exact_test.fract() {
                valid += 1;
            } else {
                test += 1;
            }
        }
        (n - valid - test, valid, test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Valid, SplitName::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

impl<T> Splits<T> {
    pub fn get(&self, name: SplitName) -> &[T] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Valid => &self.valid,
            SplitName::Test => &self.test,
        }
    }

    pub fn get_mut(&mut self, name: SplitName) -> &mut Vec<T> {
        match name {
            SplitName::Train => &mut self.train,
            SplitName::Valid => &mut self.valid,
            SplitName::Test => &mut self.test,
        }
    }
}

/// Seeded shuffle, then valid and test take their floor-rounded shares and
/// train takes the rest. Each split keeps the items' original relative order.
pub fn split<T>(items: Vec<T>, spec: &SplitSpec) -> Result<Splits<T>, CorpusError> {
    spec.validate()?;
    let n = items.len();
    let (_, n_valid, n_test) = spec.sizes(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut assignment = vec![SplitName::Train; n];
    for &i in &order[..n_valid] {
        assignment[i] = SplitName::Valid;
    }
    for &i in &order[n_valid..n_valid + n_test] {
        assignment[i] = SplitName::Test;
    }
    let mut splits = Splits {
        train: Vec::with_capacity(n - n_valid - n_test),
        valid: Vec::with_capacity(n_valid),
        test: Vec::with_capacity(n_test),
    };
    for (item, name) in items.into_iter().zip(assignment) {
        splits.get_mut(name).push(item);
    }
    Ok(splits)
}
