//! Separable toy task: messages drawn from word clusters, each cluster with
//! one canonical reply.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::train::TokenPair;
use super::{top_k, ResponseIndex, RetrievalError, TextEncoder};
use crate::corpus::ResponseSet;
use crate::text;

#[derive(Debug, Clone)]
pub struct ClusterTask {
    pub train: Vec<TokenPair>,
    /// Held-out messages with their cluster id.
    pub test: Vec<(Vec<String>, usize)>,
    /// Canonical reply text of each cluster.
    pub replies: Vec<String>,
}

const CLUSTER_WORDS: usize = 6;
const NOISE_WORDS: usize = 20;

fn message(rng: &mut ChaCha8Rng, cluster: usize) -> Vec<String> {
    let signal = rng.random_range(2..=4);
    let noise = rng.random_range(0..=2);
    let mut words: Vec<String> = Vec::with_capacity(signal + noise);
    for _ in 0..signal {
        words.push(format!("m{cluster}w{}", rng.random_range(0..CLUSTER_WORDS)));
    }
    for _ in 0..noise {
        words.push(format!("noise{}", rng.random_range(0..NOISE_WORDS)));
    }
    words.shuffle(rng);
    words
}

/// `per_cluster` training pairs and `test_per_cluster` held-out messages
/// for each of `clusters` clusters.
pub fn cluster_task(
    clusters: usize,
    per_cluster: usize,
    test_per_cluster: usize,
    seed: u64,
) -> ClusterTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let replies: Vec<String> = (0..clusters).map(|c| format!("answer c{c}")).collect();
    let reply_tokens: Vec<Vec<String>> = replies.iter().map(|r| text::tokenize(r, "en")).collect();
    let mut train = Vec::with_capacity(clusters * per_cluster);
    for c in 0..clusters {
        for _ in 0..per_cluster {
            train.push((message(&mut rng, c), reply_tokens[c].clone()));
        }
    }
    train.shuffle(&mut rng);
    let ids: Vec<usize> = (0..clusters).collect();
    let test = (0..clusters * test_per_cluster)
        .map(|_| {
            let c = *ids.choose(&mut rng).expect("at least one cluster");
            (message(&mut rng, c), c)
        })
        .collect();
    ClusterTask {
        train,
        test,
        replies,
    }
}

impl ClusterTask {
    pub fn response_set(&self) -> ResponseSet {
        // Equal counts keep the canonical replies in text order.
        ResponseSet::from_counts(
            self.replies.iter().map(|r| (r.clone(), 1)),
            "en",
            1,
            usize::MAX,
        )
    }

    /// Fraction of held-out messages whose top-1 suggestion is their
    /// cluster's reply.
    pub fn top1_accuracy<E: TextEncoder>(&self, encoder: &E) -> Result<f64, RetrievalError> {
        let index = ResponseIndex::build(encoder, self.response_set());
        let mut correct = 0;
        for (msg, cluster) in &self.test {
            let best = top_k(encoder, &index, msg, 1)?;
            if best
                .first()
                .is_some_and(|s| s.text == self.replies[*cluster])
            {
                correct += 1;
            }
        }
        Ok(correct as f64 / self.test.len().max(1) as f64)
    }
}
