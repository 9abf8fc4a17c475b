//! Fixture corpus helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use reply_suggest::corpus::{
    read_pairs, run_pipeline, write_pairs, KeywordScorer, MessagePair, PipelineConfig,
    PipelineOutput, Scorers, Translator, WordMapTranslator,
};
use reply_suggest::generation::{DecodeConfig, Seq2SeqTrainConfig};
use reply_suggest::harness::{ExperimentConfig, LanguageData, ModelKind, Protocol, Setting};
use reply_suggest::langid::{LangScores, LanguageDetector};
use reply_suggest::retrieval::TrainConfig;
use reply_suggest::text;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture_json(name: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(fixture_dir().join(name)).unwrap()).unwrap()
}

/// Labels text with the language whose word list covers the largest share
/// of its tokens.
pub struct LexiconDetector {
    languages: BTreeMap<String, HashSet<String>>,
}

impl LexiconDetector {
    pub fn from_fixture() -> Self {
        let lexicon = fixture_json("lexicon.json");
        let languages = lexicon["languages"]
            .as_object()
            .unwrap()
            .iter()
            .map(|(lang, words)| {
                let words = words
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|w| w.as_str().unwrap().to_string())
                    .collect();
                (lang.clone(), words)
            })
            .collect();
        LexiconDetector { languages }
    }
}

impl LanguageDetector for LexiconDetector {
    fn detect(&self, t: &str) -> LangScores {
        let tokens = text::tokenize(t, "");
        let hits: BTreeMap<String, usize> = self
            .languages
            .iter()
            .map(|(l, words)| {
                (
                    l.clone(),
                    tokens.iter().filter(|tok| words.contains(*tok)).count(),
                )
            })
            .collect();
        if hits.values().all(|&h| h == 0) {
            let uniform = 1.0 / self.languages.len() as f64;
            return LangScores {
                scores: hits.keys().map(|l| (l.clone(), uniform)).collect(),
                low_confidence: true,
            };
        }
        LangScores {
            scores: hits
                .into_iter()
                .map(|(l, h)| (l, h as f64 / tokens.len() as f64))
                .collect(),
            low_confidence: false,
        }
    }
}

pub fn toxic_scorer() -> KeywordScorer {
    let lexicon = fixture_json("lexicon.json");
    KeywordScorer::new(
        lexicon["toxic"]
            .as_array()
            .unwrap()
            .iter()
            .map(|w| w.as_str().unwrap()),
        1.0,
    )
}

pub fn fixture_pipeline_config() -> PipelineConfig {
    PipelineConfig {
        response_min_count: 20,
        response_max_size: 3,
        ..PipelineConfig::default()
    }
}

pub fn run_fixture_pipeline() -> PipelineOutput {
    let dump = fs::File::open(fixture_dir().join("dump.jsonl")).unwrap();
    let scorer = toxic_scorer();
    let scorers = Scorers {
        primary: Some(&scorer),
        secondary: None,
    };
    run_pipeline(
        BufReader::new(dump),
        &fixture_pipeline_config(),
        &LexiconDetector::from_fixture(),
        scorers,
    )
    .unwrap()
}

pub fn wordmap() -> WordMapTranslator {
    let text = fs::read_to_string(fixture_dir().join("wordmap.tsv")).unwrap();
    WordMapTranslator::new(text.lines().map(|l| {
        let (a, b) = l.split_once('\t').unwrap();
        (a.to_string(), b.to_string())
    }))
}

pub const TRANSLATED_DE: &str = "corpus/de/train.translated.jsonl";

/// Writes the fixture corpus under `dir/corpus` plus an English training
/// split translated into German with the stub word map.
pub fn write_fixture_corpus(dir: &Path) {
    let output = run_fixture_pipeline();
    output.write_to(&dir.join("corpus")).unwrap();
    let en = read_pairs(BufReader::new(
        fs::File::open(dir.join("corpus/en/train.jsonl")).unwrap(),
    ))
    .unwrap();
    let translator = wordmap();
    let translated: Vec<MessagePair> = en
        .iter()
        .map(|p| MessagePair {
            message: translator.translate(&p.message).unwrap(),
            reply: translator.translate(&p.reply).unwrap(),
            language: "de".into(),
            ..p.clone()
        })
        .collect();
    let mut out = BufWriter::new(fs::File::create(dir.join(TRANSLATED_DE)).unwrap());
    write_pairs(&mut out, &translated).unwrap();
    out.flush().unwrap();
}

pub fn language_data(lang: &str) -> LanguageData {
    LanguageData {
        train: Some(format!("corpus/{lang}/train.jsonl").into()),
        translated_train: (lang == "de").then(|| TRANSLATED_DE.into()),
        test: Some(format!("corpus/{lang}/test.jsonl").into()),
        responses: Some(format!("corpus/{lang}/responses.tsv").into()),
    }
}

/// Small, fast experiment over the fixture corpus.
pub fn toy_config(
    model: ModelKind,
    setting: Setting,
    train: &[&str],
    eval: &str,
) -> ExperimentConfig {
    ExperimentConfig {
        model,
        setting,
        train_languages: train.iter().map(|s| s.to_string()).collect(),
        eval_language: eval.to_string(),
        data: ["en", "de"]
            .iter()
            .map(|l| (l.to_string(), language_data(l)))
            .collect(),
        protocol: Protocol::default(),
        seed: 5,
        max_eval_examples: Some(20),
        model_path: None,
        response_min_count: 20,
        response_max_size: 3,
        retrieval: TrainConfig {
            dim: 16,
            batch_size: 32,
            epochs: 2,
            learning_rate: 1e-2,
            seed: 5,
            ..Default::default()
        },
        generation: Seq2SeqTrainConfig {
            dim: 16,
            batch_size: 16,
            max_steps: Some(20),
            learning_rate: 1e-2,
            max_tokens: 10,
            seed: 5,
            ..Default::default()
        },
        decode: DecodeConfig {
            beam_width: 3,
            max_len: 6,
            alpha: 0.0,
        },
    }
}
