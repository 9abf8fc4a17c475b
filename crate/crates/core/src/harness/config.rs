use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::corpus::{DEFAULT_MAX_SIZE, DEFAULT_MIN_COUNT};
use crate::generation::{DecodeConfig, Seq2SeqTrainConfig};
use crate::retrieval::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Retrieval,
    Generation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Monolingual,
    ZeroShot,
    Mt,
    Multilingual,
}

impl Setting {
    pub const ALL: [Setting; 4] = [
        Setting::Monolingual,
        Setting::ZeroShot,
        Setting::Mt,
        Setting::Multilingual,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Setting::Monolingual => "monolingual",
            Setting::ZeroShot => "zero_shot",
            Setting::Mt => "mt",
            Setting::Multilingual => "multilingual",
        }
    }
}

/// The language zero-shot runs train on.
pub const SOURCE_LANGUAGE: &str = "en";

/// Files for one language. Relative paths resolve against the directory
/// handed to the experiment runner.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanguageData {
    /// Organic training pairs.
    pub train: Option<PathBuf>,
    /// Training pairs machine-translated into this language.
    pub translated_train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub responses: Option<PathBuf>,
}

/// Evaluation protocol. Reports are only comparable when these match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Protocol {
    /// Suggestions per message.
    pub k: usize,
    /// Reference plus distractors ranked for MRR and P@1.
    pub mrr_candidates: usize,
    pub bleu_order: usize,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            k: 3,
            mrr_candidates: 100,
            bleu_order: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub setting: Setting,
    pub train_languages: Vec<String>,
    pub eval_language: String,
    pub data: BTreeMap<String, LanguageData>,
    pub protocol: Protocol,
    pub seed: u64,
    /// Evaluate only the first this-many test pairs.
    pub max_eval_examples: Option<usize>,
    /// Load this model instead of training one.
    pub model_path: Option<PathBuf>,
    pub response_min_count: usize,
    pub response_max_size: usize,
    pub retrieval: TrainConfig,
    pub generation: Seq2SeqTrainConfig,
    pub decode: DecodeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelKind::Retrieval,
            setting: Setting::Monolingual,
            train_languages: vec![SOURCE_LANGUAGE.to_string()],
            eval_language: SOURCE_LANGUAGE.to_string(),
            data: BTreeMap::new(),
            protocol: Protocol::default(),
            seed: 0,
            max_eval_examples: None,
            model_path: None,
            response_min_count: DEFAULT_MIN_COUNT,
            response_max_size: DEFAULT_MAX_SIZE,
            retrieval: TrainConfig::default(),
            generation: Seq2SeqTrainConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

/// What a training file is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSource {
    Organic,
    Translated,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let eval = &self.eval_language;
        let langs = &self.train_languages;
        match self.setting {
            Setting::Monolingual | Setting::Mt if langs.as_slice() != [eval.clone()] => {
                return bad(format!(
                    "{} trains on the eval language only; set train_languages = [{eval:?}]",
                    self.setting.as_str()
                ));
            }
            Setting::ZeroShot if langs.as_slice() != [SOURCE_LANGUAGE.to_string()] => {
                return bad(format!("zero_shot trains on {SOURCE_LANGUAGE:?} only"));
            }
            Setting::Multilingual if langs.len() < 2 => {
                return bad("multilingual needs at least two training languages".into());
            }
            _ => {}
        }
        let mut sorted = langs.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != langs.len() {
            return bad("train_languages has duplicates".into());
        }
        if self.protocol.k == 0 || self.protocol.mrr_candidates < 2 || self.protocol.bleu_order == 0
        {
            return bad("protocol needs k >= 1, mrr_candidates >= 2 and bleu_order >= 1".into());
        }
        if self.model_path.is_none() {
            for (lang, source) in self.training_sources() {
                let data = self.data.get(&lang);
                let path = match source {
                    TrainSource::Organic => data.and_then(|d| d.train.as_ref()),
                    TrainSource::Translated => data.and_then(|d| d.translated_train.as_ref()),
                };
                if path.is_none() {
                    let field = if source == TrainSource::Organic {
                        "train"
                    } else {
                        "translated_train"
                    };
                    return bad(format!(
                        "data.{lang}.{field} is required for {}",
                        self.setting.as_str()
                    ));
                }
            }
        }
        if self.data.get(eval).and_then(|d| d.test.as_ref()).is_none() {
            return bad(format!("data.{eval}.test is required"));
        }
        if self.model == ModelKind::Retrieval
            && self
                .data
                .get(eval)
                .and_then(|d| d.responses.as_ref())
                .is_none()
        {
            return bad(format!(
                "retrieval evaluation needs a response set: set data.{eval}.responses"
            ));
        }
        self.retrieval
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.decode
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    /// (language, source) of every training file the setting reads.
    pub fn training_sources(&self) -> Vec<(String, TrainSource)> {
        match self.setting {
            Setting::Monolingual => vec![(self.eval_language.clone(), TrainSource::Organic)],
            Setting::ZeroShot => vec![(SOURCE_LANGUAGE.to_string(), TrainSource::Organic)],
            Setting::Mt => vec![(self.eval_language.clone(), TrainSource::Translated)],
            Setting::Multilingual => self
                .train_languages
                .iter()
                .map(|l| (l.clone(), TrainSource::Organic))
                .collect(),
        }
    }

    /// True when the eval language's own organic training data is not used.
    pub fn is_cross_lingual(&self) -> bool {
        !self
            .training_sources()
            .iter()
            .any(|(l, s)| *s == TrainSource::Organic && *l == self.eval_language)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(train: bool, translated: bool) -> LanguageData {
        LanguageData {
            train: train.then(|| "train.jsonl".into()),
            translated_train: translated.then(|| "mt.jsonl".into()),
            test: Some("test.jsonl".into()),
            responses: Some("responses.tsv".into()),
        }
    }

    fn config(setting: Setting, train: &[&str], eval: &str) -> ExperimentConfig {
        let mut data_map = BTreeMap::new();
        data_map.insert("en".to_string(), data(true, false));
        data_map.insert("de".to_string(), data(true, true));
        ExperimentConfig {
            setting,
            train_languages: train.iter().map(|s| s.to_string()).collect(),
            eval_language: eval.to_string(),
            data: data_map,
            ..Default::default()
        }
    }

    #[test]
    fn setting_invariants() {
        assert!(config(Setting::Monolingual, &["de"], "de")
            .validate()
            .is_ok());
        assert!(config(Setting::Monolingual, &["en"], "de")
            .validate()
            .is_err());
        assert!(config(Setting::ZeroShot, &["en"], "de").validate().is_ok());
        assert!(config(Setting::ZeroShot, &["de"], "de").validate().is_err());
        assert!(config(Setting::Mt, &["de"], "de").validate().is_ok());
        assert!(config(Setting::Mt, &["en"], "en").validate().is_err());
        assert!(config(Setting::Multilingual, &["en", "de"], "de")
            .validate()
            .is_ok());
        assert!(config(Setting::Multilingual, &["en"], "en")
            .validate()
            .is_err());
        assert!(config(Setting::Multilingual, &["en", "en"], "en")
            .validate()
            .is_err());
    }

    #[test]
    fn retrieval_needs_response_set() {
        let mut c = config(Setting::Monolingual, &["de"], "de");
        c.data.get_mut("de").unwrap().responses = None;
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("response set"));
        c.model = ModelKind::Generation;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn training_files_and_cross_lingual() {
        let zs = config(Setting::ZeroShot, &["en"], "de");
        assert_eq!(
            zs.training_sources(),
            vec![("en".to_string(), TrainSource::Organic)]
        );
        assert!(zs.is_cross_lingual());
        assert!(!config(Setting::ZeroShot, &["en"], "en").is_cross_lingual());
        let mt = config(Setting::Mt, &["de"], "de");
        assert_eq!(
            mt.training_sources(),
            vec![("de".to_string(), TrainSource::Translated)]
        );
        assert!(mt.is_cross_lingual());
        assert!(!config(Setting::Multilingual, &["en", "de"], "de").is_cross_lingual());
        assert!(!config(Setting::Monolingual, &["de"], "de").is_cross_lingual());
    }
}
