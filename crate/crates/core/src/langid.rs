//! Character n-gram Naive Bayes language identifier.
//!
//! Text is NFC-normalized, lowercased, whitespace-collapsed and padded with a
//! single space on each side before n-gram extraction. Likelihoods use add-k
//! smoothing over the union n-gram vocabulary plus one slot reserved for
//! unseen n-grams, so every per-language distribution sums to at most one.
//!
//! # Model file
//!
//! A UTF-8, tab-separated table, one record per line:
//!
//! ```text
//! langid	1	<ngram_order>	<smoothing>
//! prior	<lang>	<log-prob>
//! unseen	<lang>	<log-prob>
//! gram	<lang>	<ngram>	<log-prob>
//! ```
//!
//! N-grams never contain tabs or newlines because whitespace is collapsed to
//! single spaces during normalization. Floats are written with Rust's
//! shortest round-trip formatting, so load(save(m)) == m exactly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::text;

pub const DEFAULT_NGRAM_ORDER: usize = 3;
pub const DEFAULT_SMOOTHING: f64 = 1.0;

#[derive(Debug, Error)]
pub enum LangIdError {
    #[error("language identification needs at least two languages, got {0}")]
    TooFewLanguages(usize),
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed model file at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Posterior scores for one text.
#[derive(Debug, Clone, PartialEq)]
pub struct LangScores {
    pub scores: BTreeMap<String, f64>,
    /// Set when the input carried no evidence (empty text) and the scores are
    /// the uniform fallback.
    pub low_confidence: bool,
}

impl LangScores {
    /// Highest-scoring label; ties go to the lexicographically smallest.
    pub fn best(&self) -> Option<(&str, f64)> {
        self.scores
            .iter()
            .fold(None, |best: Option<(&str, f64)>, (l, &s)| match best {
                Some((_, b)) if s <= b => best,
                _ => Some((l.as_str(), s)),
            })
    }
}

/// Anything that maps a text to per-language scores summing to at most one.
pub trait LanguageDetector: Sync {
    fn detect(&self, text: &str) -> LangScores;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LangIdModel {
    ngram_order: usize,
    smoothing: f64,
    log_priors: BTreeMap<String, f64>,
    log_unseen: BTreeMap<String, f64>,
    log_likelihoods: BTreeMap<String, HashMap<String, f64>>,
}

fn prepare(text: &str) -> Vec<char> {
    let collapsed = text::normalize(text)
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    let mut chars = Vec::with_capacity(collapsed.len() + 2);
    chars.push(' ');
    chars.extend(collapsed.chars());
    chars.push(' ');
    chars
}

/// Character n-grams of a prepared text. Texts shorter than `n` yield the
/// whole padded string as a single n-gram.
fn ngrams(text: &str, n: usize) -> Vec<String> {
    let chars = prepare(text);
    if chars.len() <= n {
        return vec![chars.into_iter().collect()];
    }
    chars.windows(n).map(|w| w.iter().collect()).collect()
}

impl LangIdModel {
    /// Trains with the default order (3) and smoothing (1.0).
    pub fn train<S: AsRef<str>>(labeled: &[(S, S)]) -> Result<Self, LangIdError> {
        Self::train_with(labeled, DEFAULT_NGRAM_ORDER, DEFAULT_SMOOTHING)
    }

    pub fn train_with<S: AsRef<str>>(
        labeled: &[(S, S)],
        ngram_order: usize,
        smoothing: f64,
    ) -> Result<Self, LangIdError> {
        if ngram_order == 0 {
            return Err(LangIdError::InvalidParameter(
                "ngram_order must be >= 1".into(),
            ));
        }
        if !(smoothing > 0.0 && smoothing.is_finite()) {
            return Err(LangIdError::InvalidParameter(format!(
                "smoothing must be > 0, got {smoothing}"
            )));
        }
        let mut doc_counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut gram_counts: BTreeMap<String, HashMap<String, usize>> = BTreeMap::new();
        let mut vocabulary: BTreeSet<String> = BTreeSet::new();
        for (text, lang) in labeled {
            let lang = lang.as_ref().to_string();
            *doc_counts.entry(lang.clone()).or_insert(0) += 1;
            let counts = gram_counts.entry(lang).or_default();
            for gram in ngrams(text.as_ref(), ngram_order) {
                vocabulary.insert(gram.clone());
                *counts.entry(gram).or_insert(0) += 1;
            }
        }
        if doc_counts.len() < 2 {
            return Err(LangIdError::TooFewLanguages(doc_counts.len()));
        }
        let total_docs: usize = doc_counts.values().sum();
        // One extra slot holds the mass of every unseen n-gram.
        let slots = vocabulary.len() as f64 + 1.0;
        let mut log_priors = BTreeMap::new();
        let mut log_unseen = BTreeMap::new();
        let mut log_likelihoods = BTreeMap::new();
        for (lang, docs) in &doc_counts {
            log_priors.insert(lang.clone(), (*docs as f64 / total_docs as f64).ln());
            let counts = &gram_counts[lang];
            let total: usize = counts.values().sum();
            let denom = total as f64 + smoothing * slots;
            log_unseen.insert(lang.clone(), (smoothing / denom).ln());
            let table = counts
                .iter()
                .map(|(g, &c)| (g.clone(), ((c as f64 + smoothing) / denom).ln()))
                .collect();
            log_likelihoods.insert(lang.clone(), table);
        }
        Ok(LangIdModel {
            ngram_order,
            smoothing,
            log_priors,
            log_unseen,
            log_likelihoods,
        })
    }

    pub fn ngram_order(&self) -> usize {
        self.ngram_order
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.log_priors.keys().map(String::as_str)
    }

    pub fn log_prior(&self, lang: &str) -> Option<f64> {
        self.log_priors.get(lang).copied()
    }

    /// Log-likelihood of one n-gram under a language (unseen mass if absent).
    pub fn log_likelihood(&self, lang: &str, gram: &str) -> Option<f64> {
        let table = self.log_likelihoods.get(lang)?;
        Some(table.get(gram).copied().unwrap_or(self.log_unseen[lang]))
    }

    /// Total probability mass over the observed vocabulary plus the unseen slot.
    pub fn probability_mass(&self, lang: &str) -> Option<f64> {
        let table = self.log_likelihoods.get(lang)?;
        let vocab: BTreeSet<&String> = self
            .log_likelihoods
            .values()
            .flat_map(|t| t.keys())
            .collect();
        let unseen = self.log_unseen[lang].exp();
        let observed: f64 = vocab
            .iter()
            .map(|g| table.get(*g).map_or(unseen, |lp| lp.exp()))
            .sum();
        Some(observed + unseen)
    }

    /// Posterior over languages (softmax of log-posteriors).
    pub fn predict(&self, text: &str) -> LangScores {
        if text.trim().is_empty() {
            let uniform = 1.0 / self.log_priors.len() as f64;
            return LangScores {
                scores: self
                    .log_priors
                    .keys()
                    .map(|l| (l.clone(), uniform))
                    .collect(),
                low_confidence: true,
            };
        }
        let grams = ngrams(text, self.ngram_order);
        let log_post: Vec<(&String, f64)> = self
            .log_priors
            .iter()
            .map(|(lang, prior)| {
                let table = &self.log_likelihoods[lang];
                let unseen = self.log_unseen[lang];
                let ll: f64 = grams
                    .iter()
                    .map(|g| table.get(g).copied().unwrap_or(unseen))
                    .sum();
                (lang, prior + ll)
            })
            .collect();
        let max = log_post
            .iter()
            .map(|&(_, v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = log_post.iter().map(|&(_, v)| (v - max).exp()).sum();
        LangScores {
            scores: log_post
                .into_iter()
                .map(|(l, v)| (l.clone(), (v - max).exp() / z))
                .collect(),
            low_confidence: false,
        }
    }

    pub fn save<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "langid\t1\t{}\t{:?}", self.ngram_order, self.smoothing)?;
        for (lang, lp) in &self.log_priors {
            writeln!(out, "prior\t{lang}\t{lp:?}")?;
        }
        for (lang, lp) in &self.log_unseen {
            writeln!(out, "unseen\t{lang}\t{lp:?}")?;
        }
        for (lang, table) in &self.log_likelihoods {
            let mut grams: Vec<_> = table.iter().collect();
            grams.sort_by(|a, b| a.0.cmp(b.0));
            for (gram, lp) in grams {
                writeln!(out, "gram\t{lang}\t{gram}\t{lp:?}")?;
            }
        }
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self, LangIdError> {
        let bad = |line: usize, reason: &str| LangIdError::Format {
            line,
            reason: reason.to_string(),
        };
        let parse_f64 =
            |line: usize, s: &str| s.parse::<f64>().map_err(|_| bad(line, "invalid number"));
        let mut lines = input.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let header = header?;
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 4 || fields[0] != "langid" || fields[1] != "1" {
            return Err(bad(
                1,
                "expected `langid\\t1\\t<order>\\t<smoothing>` header",
            ));
        }
        let ngram_order = fields[2].parse().map_err(|_| bad(1, "invalid order"))?;
        let smoothing = parse_f64(1, fields[3])?;
        let mut model = LangIdModel {
            ngram_order,
            smoothing,
            log_priors: BTreeMap::new(),
            log_unseen: BTreeMap::new(),
            log_likelihoods: BTreeMap::new(),
        };
        for (idx, line) in lines {
            let line = line?;
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                ["prior", lang, lp] => {
                    model
                        .log_priors
                        .insert(lang.to_string(), parse_f64(lineno, lp)?);
                    model.log_likelihoods.entry(lang.to_string()).or_default();
                }
                ["unseen", lang, lp] => {
                    model
                        .log_unseen
                        .insert(lang.to_string(), parse_f64(lineno, lp)?);
                }
                ["gram", lang, gram, lp] => {
                    model
                        .log_likelihoods
                        .entry(lang.to_string())
                        .or_default()
                        .insert(gram.to_string(), parse_f64(lineno, lp)?);
                }
                [""] => {}
                _ => return Err(bad(lineno, "unknown record")),
            }
        }
        if model.log_priors.len() < 2 {
            return Err(LangIdError::TooFewLanguages(model.log_priors.len()));
        }
        for lang in model.log_priors.keys() {
            if !model.log_unseen.contains_key(lang) {
                return Err(bad(0, &format!("missing unseen mass for {lang}")));
            }
        }
        if model.log_likelihoods.len() != model.log_priors.len() {
            return Err(bad(0, "n-gram table for a language without a prior"));
        }
        Ok(model)
    }
}

impl LanguageDetector for LangIdModel {
    fn detect(&self, text: &str) -> LangScores {
        self.predict(text)
    }
}
