//! Deletion, score, toxicity and language-confidence filters.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::pairs::{CandidatePair, MessagePair};
use super::CorpusError;
use crate::langid::LanguageDetector;
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DropReason {
    Deleted,
    LowScore,
    Toxic,
    LowLangConfidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub deletion_markers: Vec<String>,
    pub min_score: i64,
    pub lang_confidence_min: f64,
    pub toxicity_primary_max: f64,
    pub toxicity_secondary_max: f64,
    /// Keep pairs whose toxicity scoring failed (lenient) instead of dropping
    /// them (strict, the default).
    pub keep_on_scorer_error: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            deletion_markers: vec!["[removed]".into(), "[deleted]".into()],
            min_score: 1,
            lang_confidence_min: 0.7,
            toxicity_primary_max: 0.9,
            toxicity_secondary_max: 0.5,
            keep_on_scorer_error: false,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, v) in [
            ("lang_confidence_min", self.lang_confidence_min),
            ("toxicity_primary_max", self.toxicity_primary_max),
            ("toxicity_secondary_max", self.toxicity_secondary_max),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CorpusError::Config(format!(
                    "{name} must be in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("toxicity scorer failed: {0}")]
pub struct ScorerError(pub String);

/// Maps a text to a toxicity score in [0, 1].
pub trait ToxicityScorer: Sync {
    fn score(&self, text: &str) -> Result<f64, ScorerError>;
}

/// Lexicon stub: scores `hit_score` when any token is in the lexicon, else 0.
#[derive(Debug, Clone)]
pub struct KeywordScorer {
    lexicon: HashSet<String>,
    hit_score: f64,
}

impl KeywordScorer {
    pub fn new<I, S>(words: I, hit_score: f64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        KeywordScorer {
            lexicon: words
                .into_iter()
                .map(|w| text::normalize(w.as_ref()))
                .collect(),
            hit_score,
        }
    }
}

impl ToxicityScorer for KeywordScorer {
    fn score(&self, t: &str) -> Result<f64, ScorerError> {
        let hit = text::tokenize(t, "")
            .iter()
            .any(|tok| self.lexicon.contains(tok));
        Ok(if hit { self.hit_score } else { 0.0 })
    }
}

/// The two toxicity models: a primary scorer applied everywhere it is
/// configured and a secondary scorer with its own (lower) threshold.
#[derive(Clone, Copy, Default)]
pub struct Scorers<'a> {
    pub primary: Option<&'a dyn ToxicityScorer>,
    pub secondary: Option<&'a dyn ToxicityScorer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Keep,
    Drop(DropReason),
    /// A toxicity scorer failed; the pair is kept or dropped per
    /// [`FilterConfig::keep_on_scorer_error`].
    ScorerFailed {
        kept: bool,
    },
}

impl Verdict {
    pub fn is_kept(&self) -> bool {
        matches!(self, Verdict::Keep | Verdict::ScorerFailed { kept: true })
    }
}

fn is_deleted(body: &str, markers: &[String]) -> bool {
    let trimmed = body.trim();
    markers.iter().any(|m| trimmed.starts_with(m.as_str()))
}

/// Toxicity decision for a message/reply pair: the pair score is the larger
/// of the two texts' scores, and a pair is toxic when it exceeds a threshold.
pub fn toxicity_verdict(
    message: &str,
    reply: &str,
    config: &FilterConfig,
    scorers: Scorers<'_>,
) -> Verdict {
    let checks = [
        (scorers.primary, config.toxicity_primary_max),
        (scorers.secondary, config.toxicity_secondary_max),
    ];
    for (scorer, threshold) in checks {
        let Some(scorer) = scorer else { continue };
        match scorer
            .score(message)
            .and_then(|m| Ok(m.max(scorer.score(reply)?)))
        {
            Ok(s) if s > threshold => return Verdict::Drop(DropReason::Toxic),
            Ok(_) => {}
            Err(_) => {
                return Verdict::ScorerFailed {
                    kept: config.keep_on_scorer_error,
                }
            }
        }
    }
    Verdict::Keep
}

/// Deletion markers, then the score floor (on either side), then toxicity.
pub fn apply_filters(pair: &CandidatePair, config: &FilterConfig, scorers: Scorers<'_>) -> Verdict {
    if is_deleted(&pair.message, &config.deletion_markers)
        || is_deleted(&pair.reply, &config.deletion_markers)
    {
        return Verdict::Drop(DropReason::Deleted);
    }
    if pair.parent_score < config.min_score || pair.child_score < config.min_score {
        return Verdict::Drop(DropReason::LowScore);
    }
    toxicity_verdict(&pair.message, &pair.reply, config, scorers)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LanguageVerdict {
    Labeled(MessagePair),
    Drop(DropReason),
}

/// Runs the detector on `message + " " + reply` and labels the pair with the
/// best language when its score is strictly above `min_confidence`.
pub fn assign_language(
    pair: &CandidatePair,
    detector: &dyn LanguageDetector,
    min_confidence: f64,
) -> Result<LanguageVerdict, CorpusError> {
    let scores = detector.detect(&format!("{} {}", pair.message, pair.reply));
    let Some((lang, confidence)) = scores.best() else {
        return Err(CorpusError::Config(
            "language detector has no labels".into(),
        ));
    };
    if scores.low_confidence || confidence <= min_confidence {
        return Ok(LanguageVerdict::Drop(DropReason::LowLangConfidence));
    }
    Ok(LanguageVerdict::Labeled(MessagePair {
        message: pair.message.clone(),
        reply: pair.reply.clone(),
        language: lang.to_string(),
        lang_confidence: confidence,
        source_ids: (pair.parent_id.clone(), pair.child_id.clone()),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::langid::LangScores;
    use std::collections::BTreeMap;

    fn pair(message: &str, reply: &str, parent_score: i64, child_score: i64) -> CandidatePair {
        CandidatePair {
            message: message.into(),
            reply: reply.into(),
            parent_id: "p".into(),
            child_id: "c".into(),
            parent_score,
            child_score,
        }
    }

    struct Fixed(f64);
    impl ToxicityScorer for Fixed {
        fn score(&self, _: &str) -> Result<f64, ScorerError> {
            Ok(self.0)
        }
    }

    struct Broken;
    impl ToxicityScorer for Broken {
        fn score(&self, _: &str) -> Result<f64, ScorerError> {
            Err(ScorerError("offline".into()))
        }
    }

    struct Table(Vec<(&'static str, f64)>);
    impl LanguageDetector for Table {
        fn detect(&self, _: &str) -> LangScores {
            LangScores {
                scores: self
                    .0
                    .iter()
                    .map(|&(l, s)| (l.to_string(), s))
                    .collect::<BTreeMap<_, _>>(),
                low_confidence: false,
            }
        }
    }

    #[test]
    fn deleted_prefix() {
        let c = FilterConfig::default();
        let none = Scorers::default();
        assert_eq!(
            apply_filters(&pair("hi", "[deleted] nothing", 5, 5), &c, none),
            Verdict::Drop(DropReason::Deleted)
        );
        assert_eq!(
            apply_filters(&pair("  [removed]", "ok", 5, 5), &c, none),
            Verdict::Drop(DropReason::Deleted)
        );
        // Prefix only, case-sensitive.
        assert_eq!(
            apply_filters(&pair("hi", "it was [deleted]", 5, 5), &c, none),
            Verdict::Keep
        );
        assert_eq!(
            apply_filters(&pair("hi", "[Deleted]", 5, 5), &c, none),
            Verdict::Keep
        );
    }

    #[test]
    fn low_score_on_either_side() {
        let c = FilterConfig::default();
        let none = Scorers::default();
        assert_eq!(
            apply_filters(&pair("a", "b", 5, 0), &c, none),
            Verdict::Drop(DropReason::LowScore)
        );
        assert_eq!(
            apply_filters(&pair("a", "b", -3, 5), &c, none),
            Verdict::Drop(DropReason::LowScore)
        );
        assert_eq!(
            apply_filters(&pair("a", "b", 1, 1), &c, none),
            Verdict::Keep
        );
    }

    #[test]
    fn toxicity_thresholds() {
        let c = FilterConfig::default();
        let p = pair("a", "b", 5, 3);
        let primary = |s: &Fixed| {
            apply_filters(
                &p,
                &c,
                Scorers {
                    primary: Some(s),
                    secondary: None,
                },
            )
        };
        assert_eq!(primary(&Fixed(0.95)), Verdict::Drop(DropReason::Toxic));
        assert_eq!(primary(&Fixed(0.1)), Verdict::Keep);
        assert_eq!(primary(&Fixed(0.9)), Verdict::Keep);
        let clean = Fixed(0.1);
        let secondary = Fixed(0.6);
        let s = Scorers {
            primary: Some(&clean),
            secondary: Some(&secondary),
        };
        assert_eq!(apply_filters(&p, &c, s), Verdict::Drop(DropReason::Toxic));
    }

    #[test]
    fn keyword_scorer_scores_either_text() {
        let c = FilterConfig::default();
        let kw = KeywordScorer::new(["Idiot"], 0.95);
        let s = Scorers {
            primary: Some(&kw),
            secondary: None,
        };
        assert_eq!(
            apply_filters(&pair("you idiot!", "no", 5, 5), &c, s),
            Verdict::Drop(DropReason::Toxic)
        );
        assert_eq!(
            apply_filters(&pair("hey", "IDIOT", 5, 5), &c, s),
            Verdict::Drop(DropReason::Toxic)
        );
        assert_eq!(
            apply_filters(&pair("hey", "hello", 5, 5), &c, s),
            Verdict::Keep
        );
    }

    #[test]
    fn scorer_failure_is_not_toxic() {
        let p = pair("a", "b", 5, 5);
        let s = Scorers {
            primary: Some(&Broken),
            secondary: None,
        };
        let strict = FilterConfig::default();
        let verdict = apply_filters(&p, &strict, s);
        assert_eq!(verdict, Verdict::ScorerFailed { kept: false });
        assert!(!verdict.is_kept());
        let lenient = FilterConfig {
            keep_on_scorer_error: true,
            ..FilterConfig::default()
        };
        assert!(apply_filters(&p, &lenient, s).is_kept());
    }

    #[test]
    fn language_assignment() {
        let p = pair("hello there", "hi", 5, 5);
        let label = |t: Vec<(&'static str, f64)>| assign_language(&p, &Table(t), 0.7).unwrap();
        match label(vec![("en", 0.95)]) {
            LanguageVerdict::Labeled(m) => {
                assert_eq!(m.language, "en");
                assert_eq!(m.lang_confidence, 0.95);
                assert_eq!(m.source_ids, ("p".to_string(), "c".to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(
            label(vec![("en", 0.5), ("de", 0.4)]),
            LanguageVerdict::Drop(DropReason::LowLangConfidence)
        );
        assert!(
            matches!(label(vec![("de", 0.71)]), LanguageVerdict::Labeled(m) if m.language == "de")
        );
        assert_eq!(
            label(vec![("de", 0.7)]),
            LanguageVerdict::Drop(DropReason::LowLangConfidence)
        );
        assert!(matches!(
            assign_language(&p, &Table(vec![]), 0.7),
            Err(CorpusError::Config(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(FilterConfig::default().validate().is_ok());
        let bad = FilterConfig {
            toxicity_primary_max: 1.5,
            ..FilterConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
