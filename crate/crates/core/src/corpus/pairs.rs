//! Message/reply pair extraction from comment threads.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::dump::RawComment;

/// A parent/child pair before filtering and language assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub message: String,
    pub reply: String,
    pub parent_id: String,
    pub child_id: String,
    pub parent_score: i64,
    pub child_score: i64,
}

/// A retained training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessagePair {
    pub message: String,
    pub reply: String,
    #[serde(rename = "lang")]
    pub language: String,
    #[serde(rename = "confidence")]
    pub lang_confidence: f64,
    /// (parent id, child id); not part of the on-disk pair format.
    #[serde(skip)]
    pub source_ids: (String, String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStats {
    pub pairs: usize,
    /// Children whose parent id does not resolve within the same thread.
    pub orphans: usize,
    /// Resolved pairs where either text is empty after trimming.
    pub empty_text: usize,
}

/// Pairs every child comment with its parent in the same thread.
///
/// Two passes: index every comment by (thread, id), then resolve parents.
/// Output follows the input order of the child comments. When an id repeats
/// within a thread the first occurrence is the one indexed.
pub fn build_pairs(comments: &[RawComment]) -> (Vec<CandidatePair>, PairStats) {
    let mut index: HashMap<&str, HashMap<&str, &RawComment>> = HashMap::new();
    for c in comments {
        index
            .entry(&c.thread_id)
            .or_default()
            .entry(&c.id)
            .or_insert(c);
    }
    let mut stats = PairStats::default();
    let mut pairs = Vec::new();
    for child in comments {
        let Some(parent_id) = child.parent_id.as_deref() else {
            continue;
        };
        let Some(parent) = index
            .get(child.thread_id.as_str())
            .and_then(|t| t.get(parent_id))
        else {
            stats.orphans += 1;
            continue;
        };
        if parent.body.trim().is_empty() || child.body.trim().is_empty() {
            stats.empty_text += 1;
            continue;
        }
        pairs.push(CandidatePair {
            message: parent.body.clone(),
            reply: child.body.clone(),
            parent_id: parent.id.clone(),
            child_id: child.id.clone(),
            parent_score: parent.score,
            child_score: child.score,
        });
    }
    stats.pairs = pairs.len();
    (pairs, stats)
}
