//! Evaluation metrics: weighted ROUGE ensemble, best-of-k scoring, MRR family,
//! corpus BLEU, distinct-n diversity and perplexity.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("rank list is empty")]
    EmptyRanks,
    #[error("ranks are 1-based, got {0}")]
    InvalidRank(usize),
    #[error("reference is not among the scored candidates")]
    ReferenceAbsent,
    #[error("candidate and reference lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("n-gram order must be at least 1")]
    InvalidOrder,
    #[error("perplexity needs a positive token count")]
    NoTokens,
}

/// A tokenized text. Tokens are never empty strings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    /// Builds a sequence, dropping empty tokens.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TokenSeq(
            tokens
                .into_iter()
                .map(Into::into)
                .filter(|t: &String| !t.is_empty())
                .collect(),
        )
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

/// Tokenizer used by every metric. See [`text::tokenize`].
pub fn tokenize(text: &str, language: &str) -> TokenSeq {
    TokenSeq(text::tokenize(text, language))
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap between two count tables.
fn clipped_overlap(
    cand: &HashMap<&[String], usize>,
    reference: &HashMap<&[String], usize>,
) -> usize {
    cand.iter()
        .map(|(gram, &c)| c.min(reference.get(gram).copied().unwrap_or(0)))
        .sum()
}

/// ROUGE-n F1 over clipped n-gram overlap. Zero when either side has no n-grams.
pub fn rouge_n_f1(
    candidate: &TokenSeq,
    reference: &TokenSeq,
    n: usize,
) -> Result<f64, MetricsError> {
    if n == 0 {
        return Err(MetricsError::InvalidOrder);
    }
    let cand = ngram_counts(candidate.tokens(), n);
    let refs = ngram_counts(reference.tokens(), n);
    let cand_total: usize = cand.values().sum();
    let ref_total: usize = refs.values().sum();
    if cand_total == 0 || ref_total == 0 {
        return Ok(0.0);
    }
    let overlap = clipped_overlap(&cand, &refs);
    if overlap == 0 {
        return Ok(0.0);
    }
    let precision = overlap as f64 / cand_total as f64;
    let recall = overlap as f64 / ref_total as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// ROUGE-1/2/3 F1 and their weighted ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub weighted: f64,
}

impl RougeScore {
    pub const WEIGHTS: [f64; 3] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 2.0];

    pub fn from_components(r1: f64, r2: f64, r3: f64) -> Self {
        RougeScore {
            r1,
            r2,
            r3,
            weighted: r1 / 6.0 + r2 / 3.0 + r3 / 2.0,
        }
    }
}

pub fn weighted_rouge(candidate: &TokenSeq, reference: &TokenSeq) -> RougeScore {
    // n >= 1 is always satisfied here.
    let r = |n| rouge_n_f1(candidate, reference, n).unwrap_or(0.0);
    RougeScore::from_components(r(1), r(2), r(3))
}

/// Score of the candidate with the highest weighted ROUGE; ties go to the
/// lowest index. Also returns that index.
pub fn best_of_k(
    candidates: &[TokenSeq],
    reference: &TokenSeq,
) -> Result<(usize, RougeScore), MetricsError> {
    let mut best: Option<(usize, RougeScore)> = None;
    for (i, cand) in candidates.iter().enumerate() {
        let score = weighted_rouge(cand, reference);
        match best {
            Some((_, b)) if score.weighted <= b.weighted => {}
            _ => best = Some((i, score)),
        }
    }
    best.ok_or(MetricsError::EmptyCandidates)
}

fn check_ranks(ranks: &[usize]) -> Result<(), MetricsError> {
    if ranks.is_empty() {
        return Err(MetricsError::EmptyRanks);
    }
    if let Some(&bad) = ranks.iter().find(|&&r| r == 0) {
        return Err(MetricsError::InvalidRank(bad));
    }
    Ok(())
}

/// Mean reciprocal rank of 1-based ranks.
pub fn mrr(ranks: &[usize]) -> Result<f64, MetricsError> {
    check_ranks(ranks)?;
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

/// Fraction of ranks equal to 1.
pub fn precision_at_1(ranks: &[usize]) -> Result<f64, MetricsError> {
    check_ranks(ranks)?;
    Ok(ranks.iter().filter(|&&r| r == 1).count() as f64 / ranks.len() as f64)
}

/// 1-based rank of `reference` among scored candidates, score descending.
/// Distractors scoring equal to the reference are ranked ahead of it.
///
/// The first candidate equal to `reference` is the reference; any later
/// duplicates count as distractors.
pub fn rank_reference<T: PartialEq>(
    scored: &[(T, f64)],
    reference: &T,
) -> Result<usize, MetricsError> {
    let ref_idx = scored
        .iter()
        .position(|(c, _)| c == reference)
        .ok_or(MetricsError::ReferenceAbsent)?;
    let ref_score = scored[ref_idx].1;
    let ahead = scored
        .iter()
        .enumerate()
        .filter(|&(i, (_, s))| i != ref_idx && *s >= ref_score)
        .count();
    Ok(ahead + 1)
}

/// Mean over distinct responses of each response's MRR. `None` when there are
/// no ranked examples.
pub fn macro_mrr<K: Ord>(ranked: &[(K, usize)]) -> Result<Option<f64>, MetricsError> {
    if ranked.is_empty() {
        return Ok(None);
    }
    let mut per_response: BTreeMap<&K, Vec<usize>> = BTreeMap::new();
    for (key, rank) in ranked {
        per_response.entry(key).or_default().push(*rank);
    }
    let mut total = 0.0;
    for ranks in per_response.values() {
        total += mrr(ranks)?;
    }
    Ok(Some(total / per_response.len() as f64))
}

/// Distinct n-grams over total n-grams, pooled over all replies.
pub fn dist_n(replies: &[TokenSeq], n: usize) -> Result<f64, MetricsError> {
    if n == 0 {
        return Err(MetricsError::InvalidOrder);
    }
    let mut distinct: HashSet<&[String]> = HashSet::new();
    let mut total = 0usize;
    for reply in replies {
        if reply.len() < n {
            continue;
        }
        for gram in reply.tokens().windows(n) {
            distinct.insert(gram);
            total += 1;
        }
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(distinct.len() as f64 / total as f64)
}

/// Corpus BLEU with brevity penalty. Orders above one use add-one smoothing.
pub fn bleu(
    candidates: &[TokenSeq],
    references: &[TokenSeq],
    max_n: usize,
) -> Result<f64, MetricsError> {
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch(
            candidates.len(),
            references.len(),
        ));
    }
    if candidates.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if max_n == 0 {
        return Err(MetricsError::InvalidOrder);
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (cand, reference) in candidates.iter().zip(references) {
        cand_len += cand.len();
        ref_len += reference.len();
        for n in 1..=max_n {
            let c = ngram_counts(cand.tokens(), n);
            let r = ngram_counts(reference.tokens(), n);
            matches[n - 1] += clipped_overlap(&c, &r);
            totals[n - 1] += c.values().sum::<usize>();
        }
    }
    if cand_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_precision = 0.0;
    for n in 0..max_n {
        let p = if n == 0 {
            matches[0] as f64 / totals[0] as f64
        } else {
            (matches[n] as f64 + 1.0) / (totals[n] as f64 + 1.0)
        };
        log_precision += p.ln() / max_n as f64;
    }
    let brevity = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(brevity * log_precision.exp())
}

/// `exp(-total_log_prob / token_count)`.
pub fn perplexity(total_log_prob: f64, token_count: usize) -> Result<f64, MetricsError> {
    if token_count == 0 {
        return Err(MetricsError::NoTokens);
    }
    Ok((-total_log_prob / token_count as f64).exp())
}

/// Every evaluation number for one (model, language, setting) run. Metrics
/// that do not apply to a model family are `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub rouge: RougeScore,
    pub bleu: Option<f64>,
    pub mrr: Option<f64>,
    pub precision_at_1: Option<f64>,
    pub macro_mrr: Option<f64>,
    pub dist1: f64,
    pub dist2: f64,
    pub perplexity: Option<f64>,
    pub n_examples: usize,
}

impl MetricReport {
    /// Flat key -> number view. Absent metrics are omitted.
    pub fn to_flat(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        out.insert("rouge".to_string(), self.rouge.weighted);
        out.insert("rouge1".to_string(), self.rouge.r1);
        out.insert("rouge2".to_string(), self.rouge.r2);
        out.insert("rouge3".to_string(), self.rouge.r3);
        out.insert("dist1".to_string(), self.dist1);
        out.insert("dist2".to_string(), self.dist2);
        out.insert("n_examples".to_string(), self.n_examples as f64);
        let optional = [
            ("bleu", self.bleu),
            ("mrr", self.mrr),
            ("precision_at_1", self.precision_at_1),
            ("macro_mrr", self.macro_mrr),
            ("perplexity", self.perplexity),
        ];
        for (key, value) in optional {
            if let Some(v) = value {
                out.insert(key.to_string(), v);
            }
        }
        out
    }
}
