//! End-to-end corpus build: dump -> pairs -> filters -> language -> splits ->
//! response sets, with every counter recorded in a run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::filter::{
    apply_filters, assign_language, toxicity_verdict, DropReason, FilterConfig, LanguageVerdict,
    Scorers, Verdict,
};
use super::pairs::{build_pairs, MessagePair};
use super::response_set::{build_response_set, ResponseSet, DEFAULT_MAX_SIZE, DEFAULT_MIN_COUNT};
use super::split::{split, SplitName, SplitSpec, Splits};
use super::{parse_dump, write_pairs, CorpusError};
use crate::langid::LanguageDetector;

/// Where the secondary toxicity scorer runs. Empty `languages` means every
/// language.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SecondaryScope {
    pub languages: Vec<String>,
    pub splits: Vec<SplitName>,
    pub response_set: bool,
}

impl SecondaryScope {
    fn covers_language(&self, lang: &str) -> bool {
        self.languages.is_empty() || self.languages.iter().any(|l| l == lang)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub filter: FilterConfig,
    pub split: SplitSpec,
    pub response_min_count: usize,
    pub response_max_size: usize,
    pub secondary: SecondaryScope,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            filter: FilterConfig::default(),
            split: SplitSpec::default(),
            response_min_count: DEFAULT_MIN_COUNT,
            response_max_size: DEFAULT_MAX_SIZE,
            secondary: SecondaryScope::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub comments: usize,
    pub malformed: usize,
    pub orphans: usize,
    pub empty_text: usize,
    pub candidate_pairs: usize,
    pub dropped: BTreeMap<DropReason, usize>,
    pub scorer_errors: usize,
    /// Pairs kept after a scorer error under the lenient policy.
    pub kept_after_scorer_error: usize,
    pub retained: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageManifest {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub response_set: usize,
    /// Pairs removed from scoped splits by the secondary scorer.
    pub secondary_dropped: usize,
    pub secondary_response_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub counters: Counters,
    pub languages: BTreeMap<String, LanguageManifest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageCorpus {
    pub splits: Splits<MessagePair>,
    pub response_set: ResponseSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub languages: BTreeMap<String, LanguageCorpus>,
    pub manifest: RunManifest,
}

enum Outcome {
    Retained(MessagePair, bool),
    Dropped(DropReason),
    ScorerFailed,
}

/// Runs the whole corpus build. Output is a pure function of the dump bytes,
/// the config and the detector/scorers.
pub fn run_pipeline<R: BufRead>(
    dump: R,
    config: &PipelineConfig,
    detector: &dyn LanguageDetector,
    scorers: Scorers<'_>,
) -> Result<PipelineOutput, CorpusError> {
    config.filter.validate()?;
    config.split.validate()?;
    let mut counters = Counters::default();

    let mut reader = parse_dump(dump);
    let comments = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    counters.comments = comments.len();
    counters.malformed = reader.malformed();

    let (candidates, pair_stats) = build_pairs(&comments);
    counters.orphans = pair_stats.orphans;
    counters.empty_text = pair_stats.empty_text;
    counters.candidate_pairs = candidates.len();

    // The secondary scorer runs after splitting, only where scoped.
    let primary_only = Scorers {
        primary: scorers.primary,
        secondary: None,
    };
    let min_conf = config.filter.lang_confidence_min;
    let outcomes = candidates
        .par_iter()
        .map(|c| -> Result<Outcome, CorpusError> {
            let after_scorer_error = match apply_filters(c, &config.filter, primary_only) {
                Verdict::Drop(reason) => return Ok(Outcome::Dropped(reason)),
                Verdict::ScorerFailed { kept: false } => return Ok(Outcome::ScorerFailed),
                Verdict::ScorerFailed { kept: true } => true,
                Verdict::Keep => false,
            };
            Ok(match assign_language(c, detector, min_conf)? {
                LanguageVerdict::Labeled(pair) => Outcome::Retained(pair, after_scorer_error),
                LanguageVerdict::Drop(reason) => Outcome::Dropped(reason),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut by_language: BTreeMap<String, Vec<MessagePair>> = BTreeMap::new();
    for outcome in outcomes {
        match outcome {
            Outcome::Retained(pair, after_error) => {
                if after_error {
                    counters.scorer_errors += 1;
                    counters.kept_after_scorer_error += 1;
                }
                counters.retained += 1;
                by_language
                    .entry(pair.language.clone())
                    .or_default()
                    .push(pair);
            }
            Outcome::Dropped(reason) => *counters.dropped.entry(reason).or_insert(0) += 1,
            Outcome::ScorerFailed => counters.scorer_errors += 1,
        }
    }

    let mut languages = BTreeMap::new();
    let mut manifests = BTreeMap::new();
    for (lang, pairs) in by_language {
        let mut manifest = LanguageManifest::default();
        let mut splits = split(pairs, &config.split)?;
        let secondary = scorers
            .secondary
            .filter(|_| config.secondary.covers_language(&lang));
        if let Some(scorer) = secondary {
            let only = Scorers {
                primary: None,
                secondary: Some(scorer),
            };
            for name in &config.secondary.splits {
                let set = splits.get_mut(*name);
                let before = set.len();
                set.retain(|p| {
                    toxicity_verdict(&p.message, &p.reply, &config.filter, only).is_kept()
                });
                manifest.secondary_dropped += before - set.len();
            }
        }
        let mut response_set = build_response_set(
            &splits.train,
            config.response_min_count,
            config.response_max_size,
            &lang,
        )?;
        if let (Some(scorer), true) = (secondary, config.secondary.response_set) {
            let before = response_set.len();
            let threshold = config.filter.toxicity_secondary_max;
            let keep_on_error = config.filter.keep_on_scorer_error;
            response_set.retain(|e| match scorer.score(&e.text) {
                Ok(s) => s <= threshold,
                Err(_) => keep_on_error,
            });
            manifest.secondary_response_dropped = before - response_set.len();
        }
        manifest.train = splits.train.len();
        manifest.valid = splits.valid.len();
        manifest.test = splits.test.len();
        manifest.response_set = response_set.len();
        manifests.insert(lang.clone(), manifest);
        languages.insert(
            lang,
            LanguageCorpus {
                splits,
                response_set,
            },
        );
    }

    Ok(PipelineOutput {
        languages,
        manifest: RunManifest {
            config: config.clone(),
            counters,
            languages: manifests,
        },
    })
}

impl PipelineOutput {
    /// Writes `<dir>/<lang>/{train,valid,test}.jsonl`, `<dir>/<lang>/responses.tsv`
    /// and `<dir>/manifest.json`.
    pub fn write_to(&self, dir: &Path) -> Result<(), CorpusError> {
        for (lang, corpus) in &self.languages {
            let lang_dir = dir.join(lang);
            fs::create_dir_all(&lang_dir)?;
            for name in SplitName::ALL {
                let mut out = BufWriter::new(fs::File::create(
                    lang_dir.join(format!("{}.jsonl", name.as_str())),
                )?);
                write_pairs(&mut out, corpus.splits.get(name))?;
                out.flush()?;
            }
            let mut out = BufWriter::new(fs::File::create(lang_dir.join("responses.tsv"))?);
            corpus.response_set.write_tsv(&mut out)?;
            out.flush()?;
        }
        fs::create_dir_all(dir)?;
        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(dir.join("manifest.json"), manifest + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{KeywordScorer, ScorerError, ToxicityScorer};
    use crate::langid::LangScores;
    use proptest::prelude::*;

    /// Labels text "en" unless it contains "ß" (then "de"); "??" makes it
    /// uncertain.
    struct Rule;
    impl LanguageDetector for Rule {
        fn detect(&self, text: &str) -> LangScores {
            let (lang, conf) = if text.contains("??") {
                ("en", 0.6)
            } else if text.contains('ß') {
                ("de", 0.9)
            } else {
                ("en", 0.9)
            };
            let other = if lang == "en" { "de" } else { "en" };
            LangScores {
                scores: [(lang.to_string(), conf), (other.to_string(), 1.0 - conf)]
                    .into_iter()
                    .collect(),
                low_confidence: false,
            }
        }
    }

    fn line(id: usize, parent: Option<usize>, body: &str, score: i64) -> String {
        let parent = parent.map_or("t3_x".to_string(), |p| format!("t1_c{p}"));
        serde_json::json!({"id": format!("c{id}"), "parent_id": parent, "body": body, "score": score,
            "created_utc": id, "link_id": "t3_x"})
        .to_string()
    }

    #[test]
    fn counts_each_drop_reason() {
        let lines = [
            line(0, None, "root message", 5),
            line(1, Some(0), "fine reply", 5),
            line(2, Some(0), "[deleted]", 5),
            line(3, Some(0), "downvoted", 0),
            line(4, Some(0), "you jerk", 5),
            line(5, Some(0), "what ??", 5),
            line(6, Some(0), "straße", 5),
            line(7, Some(99), "orphan", 5),
            "garbage".to_string(),
        ];
        let dump = lines.join("\n");
        let kw = KeywordScorer::new(["jerk"], 0.95);
        let config = PipelineConfig {
            response_min_count: 1,
            ..PipelineConfig::default()
        };
        let out = run_pipeline(
            dump.as_bytes(),
            &config,
            &Rule,
            Scorers {
                primary: Some(&kw),
                secondary: None,
            },
        )
        .unwrap();
        let c = &out.manifest.counters;
        assert_eq!(
            (c.comments, c.malformed, c.orphans, c.candidate_pairs),
            (8, 1, 1, 6)
        );
        assert_eq!(c.dropped[&DropReason::Deleted], 1);
        assert_eq!(c.dropped[&DropReason::LowScore], 1);
        assert_eq!(c.dropped[&DropReason::Toxic], 1);
        assert_eq!(c.dropped[&DropReason::LowLangConfidence], 1);
        assert_eq!(c.retained, 2);
        assert_eq!(out.languages.keys().collect::<Vec<_>>(), ["de", "en"]);
    }

    struct Flaky;
    impl ToxicityScorer for Flaky {
        fn score(&self, text: &str) -> Result<f64, ScorerError> {
            if text.contains("boom") {
                Err(ScorerError("timeout".into()))
            } else {
                Ok(0.0)
            }
        }
    }

    #[test]
    fn scorer_errors_follow_policy() {
        let dump = [
            line(0, None, "root", 5),
            line(1, Some(0), "boom", 5),
            line(2, Some(0), "ok", 5),
        ]
        .join("\n");
        let s = Scorers {
            primary: Some(&Flaky),
            secondary: None,
        };
        let strict = PipelineConfig::default();
        let out = run_pipeline(dump.as_bytes(), &strict, &Rule, s).unwrap();
        assert_eq!(
            (
                out.manifest.counters.scorer_errors,
                out.manifest.counters.retained
            ),
            (1, 1)
        );
        let mut lenient = PipelineConfig::default();
        lenient.filter.keep_on_scorer_error = true;
        let out = run_pipeline(dump.as_bytes(), &lenient, &Rule, s).unwrap();
        assert_eq!(
            (
                out.manifest.counters.scorer_errors,
                out.manifest.counters.retained
            ),
            (1, 2)
        );
        assert_eq!(out.manifest.counters.kept_after_scorer_error, 1);
    }

    #[test]
    fn secondary_scorer_only_where_scoped() {
        let mut lines = vec![line(0, None, "root", 5)];
        for i in 1..=40 {
            let body = if i % 2 == 0 { "mild insult" } else { "hello" };
            lines.push(line(i, Some(0), body, 5));
        }
        let dump = lines.join("\n");
        let secondary = KeywordScorer::new(["insult"], 0.6);
        let s = Scorers {
            primary: None,
            secondary: Some(&secondary),
        };
        let mut config = PipelineConfig {
            response_min_count: 1,
            ..PipelineConfig::default()
        };
        let unscoped = run_pipeline(dump.as_bytes(), &config, &Rule, s).unwrap();
        assert_eq!(unscoped.manifest.languages["en"].secondary_dropped, 0);
        assert_eq!(unscoped.manifest.languages["en"].response_set, 2);

        config.secondary = SecondaryScope {
            languages: vec!["en".into()],
            splits: vec![SplitName::Valid, SplitName::Test],
            response_set: true,
        };
        let scoped = run_pipeline(dump.as_bytes(), &config, &Rule, s).unwrap();
        let en = &scoped.languages["en"];
        assert!(en
            .splits
            .valid
            .iter()
            .chain(&en.splits.test)
            .all(|p| !p.reply.contains("insult")));
        assert!(en.splits.train.iter().any(|p| p.reply.contains("insult")));
        assert_eq!(en.response_set.texts().collect::<Vec<_>>(), ["hello"]);
        let m = &scoped.manifest.languages["en"];
        assert_eq!(m.secondary_dropped, 8 - m.valid - m.test);

        config.secondary.languages = vec!["de".into()];
        let other = run_pipeline(dump.as_bytes(), &config, &Rule, s).unwrap();
        assert_eq!(other.manifest.languages["en"].secondary_dropped, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        /// Random comments: nothing retained violates a threshold.
        #[test]
        fn retained_pairs_satisfy_all_filters(
            comments in prop::collection::vec(
                (0usize..40, -3i64..6, prop::sample::select(vec!["hi", "[deleted] x", "[removed]", "jerk", "what ??", "straße", "ok"])),
                1..120,
            )
        ) {
            let dump: Vec<String> = comments
                .iter()
                .enumerate()
                .map(|(i, (p, score, body))| line(i, (*p < i).then_some(*p), body, *score))
                .collect();
            let dump = dump.join("\n");
            let kw = KeywordScorer::new(["jerk"], 0.95);
            let config = PipelineConfig { response_min_count: 1, ..PipelineConfig::default() };
            let out = run_pipeline(dump.as_bytes(), &config, &Rule, Scorers { primary: Some(&kw), secondary: None }).unwrap();
            let by_body: BTreeMap<String, i64> =
                comments.iter().enumerate().map(|(i, c)| (format!("c{i}"), c.1)).collect();
            for corpus in out.languages.values() {
                for p in corpus.splits.train.iter().chain(&corpus.splits.valid).chain(&corpus.splits.test) {
                    prop_assert!(!p.message.trim().starts_with("[deleted]") && !p.message.trim().starts_with("[removed]"));
                    prop_assert!(!p.reply.trim().starts_with("[deleted]") && !p.reply.trim().starts_with("[removed]"));
                    prop_assert!(by_body[&p.source_ids.0] >= 1 && by_body[&p.source_ids.1] >= 1);
                    prop_assert!(!p.message.contains("jerk") && !p.reply.contains("jerk"));
                    prop_assert!(p.lang_confidence > 0.7);
                }
            }
            let c = &out.manifest.counters;
            prop_assert_eq!(c.candidate_pairs, c.retained + c.dropped.values().sum::<usize>() + c.scorer_errors);
        }
    }
}
