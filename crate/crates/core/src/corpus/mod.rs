//! Corpus construction: dump parsing, pair extraction, filtering, language
//! assignment, splitting and response sets.

mod dump;
mod filter;
mod pairs;
mod pipeline;
mod response_set;
mod split;
mod stats;

use std::io::{self, BufRead, Write};

use thiserror::Error;

pub use dump::{parse_dump, parse_record, DumpReader, RawComment};
pub use filter::{
    apply_filters, assign_language, toxicity_verdict, DropReason, FilterConfig, KeywordScorer,
    LanguageVerdict, ScorerError, Scorers, ToxicityScorer, Verdict,
};
pub use pairs::{build_pairs, CandidatePair, MessagePair, PairStats};
pub use pipeline::{
    run_pipeline, Counters, LanguageCorpus, LanguageManifest, PipelineConfig, PipelineOutput,
    RunManifest, SecondaryScope,
};
pub use response_set::{
    augment_response_set, build_response_set, escape, unescape, AugmentStats, IdentityTranslator,
    ResponseEntry, ResponseSet, TranslateError, Translator, WordMapTranslator, DEFAULT_MAX_SIZE,
    DEFAULT_MIN_COUNT,
};
pub use split::{split, SplitName, SplitSpec, Splits};
pub use stats::{corpus_stats, CorpusStats, LanguageStats};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Writes pairs as newline-delimited `{message, reply, lang, confidence}`.
pub fn write_pairs<W: Write>(mut out: W, pairs: &[MessagePair]) -> Result<(), CorpusError> {
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pairs<R: BufRead>(input: R) -> Result<Vec<MessagePair>, CorpusError> {
    let mut pairs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: MessagePair = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Format(format!("pairs line {}: {e}", i + 1)))?;
        pairs.push(pair);
    }
    Ok(pairs)
}
