use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::pairs::MessagePair;
use crate::text::whitespace_token_count;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageStats {
    pub examples: usize,
    pub tokens: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub examples: usize,
    /// Whitespace-delimited tokens over messages and replies.
    pub tokens: usize,
    pub per_language: BTreeMap<String, LanguageStats>,
}

pub fn corpus_stats(pairs: &[MessagePair]) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for p in pairs {
        let tokens = whitespace_token_count(&p.message) + whitespace_token_count(&p.reply);
        stats.examples += 1;
        stats.tokens += tokens;
        let lang = stats.per_language.entry(p.language.clone()).or_default();
        lang.examples += 1;
        lang.tokens += tokens;
    }
    stats
}
