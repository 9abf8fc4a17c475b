//! Frequency-ranked reply inventories for the retrieval model.
//!
//! On disk a response set is UTF-8 `text<TAB>count` lines in set order.
//! Backslash, tab, newline and carriage return inside a reply are written as
//! `\\`, `\t`, `\n` and `\r`.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::pairs::MessagePair;
use super::CorpusError;

pub const DEFAULT_MIN_COUNT: usize = 20;
pub const DEFAULT_MAX_SIZE: usize = 50_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseEntry {
    pub text: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseSet {
    entries: Vec<ResponseEntry>,
    language: String,
    min_count: usize,
    max_size: usize,
}

/// Count descending, then text ascending (byte order).
fn rank_order(a: &ResponseEntry, b: &ResponseEntry) -> std::cmp::Ordering {
    b.count.cmp(&a.count).then_with(|| a.text.cmp(&b.text))
}

impl ResponseSet {
    /// Builds a set from (text, count) candidates: drops counts below
    /// `min_count`, sorts, truncates to `max_size`.
    pub fn from_counts<I>(counts: I, language: &str, min_count: usize, max_size: usize) -> Self
    where
        I: IntoIterator<Item = (String, usize)>,
    {
        let mut entries: Vec<ResponseEntry> = counts
            .into_iter()
            .filter(|(text, count)| *count >= min_count && !text.is_empty())
            .map(|(text, count)| ResponseEntry { text, count })
            .collect();
        entries.sort_by(rank_order);
        entries.truncate(max_size);
        ResponseSet {
            entries,
            language: language.to_string(),
            min_count,
            max_size,
        }
    }

    pub fn entries(&self) -> &[ResponseEntry] {
        &self.entries
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.text.as_str())
    }

    pub fn position(&self, text: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.text == text)
    }

    /// Keeps only entries satisfying `keep`, preserving order.
    pub fn retain<F: FnMut(&ResponseEntry) -> bool>(&mut self, keep: F) {
        self.entries.retain(keep);
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.entries {
            writeln!(out, "{}\t{}", escape(&e.text), e.count)?;
        }
        Ok(())
    }

    /// Reads a TSV response set and checks the ordering and threshold
    /// invariants against the given parameters.
    pub fn read_tsv<R: BufRead>(
        input: R,
        language: &str,
        min_count: usize,
        max_size: usize,
    ) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| {
                CorpusError::Format(format!("response set line {}: {reason}", i + 1))
            };
            let (text, count) = line
                .rsplit_once('\t')
                .ok_or_else(|| bad("missing tab".into()))?;
            let count = count
                .parse()
                .map_err(|_| bad(format!("bad count {count:?}")))?;
            let text = unescape(text).map_err(|e| bad(e.to_string()))?;
            entries.push(ResponseEntry { text, count });
        }
        let set = ResponseSet {
            entries,
            language: language.to_string(),
            min_count,
            max_size,
        };
        set.check_invariants()?;
        Ok(set)
    }

    pub fn check_invariants(&self) -> Result<(), CorpusError> {
        let fail = |m: String| Err(CorpusError::Format(m));
        if self.entries.len() > self.max_size {
            return fail(format!(
                "{} entries exceed max size {}",
                self.entries.len(),
                self.max_size
            ));
        }
        for e in &self.entries {
            if e.count < self.min_count {
                return fail(format!(
                    "{:?} has count {} < {}",
                    e.text, e.count, self.min_count
                ));
            }
        }
        for w in self.entries.windows(2) {
            if rank_order(&w[0], &w[1]) != std::cmp::Ordering::Less {
                return fail(format!(
                    "entries {:?} and {:?} out of order or duplicated",
                    w[0].text, w[1].text
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
#[error("invalid escape sequence")]
pub struct EscapeError;

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(text: &str) -> Result<String, EscapeError> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            _ => return Err(EscapeError),
        }
    }
    Ok(out)
}

/// Counts exact reply strings (outer whitespace trimmed, no case folding) and
/// keeps the frequent ones.
pub fn build_response_set(
    train: &[MessagePair],
    min_count: usize,
    max_size: usize,
    language: &str,
) -> Result<ResponseSet, CorpusError> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for pair in train {
        if pair.language != language {
            return Err(CorpusError::Config(format!(
                "response set for {language} given a {} pair",
                pair.language
            )));
        }
        let reply = pair.reply.trim();
        if !reply.is_empty() {
            *counts.entry(reply).or_insert(0) += 1;
        }
    }
    let set = ResponseSet::from_counts(
        counts.into_iter().map(|(t, c)| (t.to_string(), c)),
        language,
        min_count,
        max_size,
    );
    if set.is_empty() {
        log::warn!("no {language} reply occurs at least {min_count} times; response set is empty");
    }
    Ok(set)
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("translation failed: {0}")]
pub struct TranslateError(pub String);

/// Text-to-text translation into one target language.
pub trait Translator {
    fn translate(&self, text: &str) -> Result<String, TranslateError>;
}

/// Returns its input.
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, text: &str) -> Result<String, TranslateError> {
        Ok(text.to_string())
    }
}

/// Deterministic stub translator: maps whitespace-separated words through a
/// dictionary and leaves unknown words as they are.
#[derive(Debug, Clone, Default)]
pub struct WordMapTranslator {
    words: HashMap<String, String>,
}

impl WordMapTranslator {
    pub fn new<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        WordMapTranslator {
            words: pairs
                .into_iter()
                .map(|(a, b)| (a.into(), b.into()))
                .collect(),
        }
    }

    /// The same mapping in the other direction. Only meaningful when the
    /// mapping is one-to-one.
    pub fn inverse(&self) -> Self {
        WordMapTranslator {
            words: self
                .words
                .iter()
                .map(|(a, b)| (b.clone(), a.clone()))
                .collect(),
        }
    }
}

impl Translator for WordMapTranslator {
    fn translate(&self, text: &str) -> Result<String, TranslateError> {
        Ok(text
            .split_whitespace()
            .map(|w| self.words.get(w).map_or(w, String::as_str))
            .collect::<Vec<_>>()
            .join(" "))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentStats {
    pub translated: usize,
    pub skipped: usize,
}

/// Translates every entry, merging entries whose translations coincide by
/// summing their counts. Failed or empty translations are skipped.
pub fn augment_response_set(
    source: &ResponseSet,
    translator: &dyn Translator,
    target_language: &str,
) -> (ResponseSet, AugmentStats) {
    let mut merged: BTreeMap<String, usize> = BTreeMap::new();
    let mut stats = AugmentStats::default();
    for entry in source.entries() {
        match translator.translate(&entry.text) {
            Ok(t) if !t.trim().is_empty() => {
                stats.translated += 1;
                *merged.entry(t.trim().to_string()).or_insert(0) += entry.count;
            }
            Ok(_) | Err(_) => stats.skipped += 1,
        }
    }
    let set = ResponseSet::from_counts(
        merged,
        target_language,
        source.min_count(),
        source.max_size(),
    );
    (set, stats)
}
