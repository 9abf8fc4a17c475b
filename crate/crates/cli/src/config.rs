use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use reply_suggest::corpus::PipelineConfig;
use reply_suggest::generation::Seq2SeqTrainConfig;
use reply_suggest::harness::ExperimentConfig;
use reply_suggest::langid::{DEFAULT_NGRAM_ORDER, DEFAULT_SMOOTHING};
use reply_suggest::retrieval::TrainConfig;

use crate::exit::Failure;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LangIdSettings {
    pub ngram_order: usize,
    pub smoothing: f64,
}

impl Default for LangIdSettings {
    fn default() -> Self {
        LangIdSettings {
            ngram_order: DEFAULT_NGRAM_ORDER,
            smoothing: DEFAULT_SMOOTHING,
        }
    }
}

/// Everything `--config` may set. Every section is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub pipeline: PipelineConfig,
    /// Lexicon for the primary toxicity scorer; empty disables it.
    pub toxic_words: Vec<String>,
    /// Lexicon for the secondary toxicity scorer; empty disables it.
    pub secondary_toxic_words: Vec<String>,
    pub langid: LangIdSettings,
    pub retrieval: TrainConfig,
    pub generation: Seq2SeqTrainConfig,
    pub experiment: Option<ExperimentConfig>,
}

impl CliConfig {
    /// Reads the TOML file, or the defaults when no file is given. Returns
    /// the directory relative experiment paths resolve against.
    pub fn load(path: Option<&Path>) -> Result<(Self, PathBuf), Failure> {
        let Some(path) = path else {
            return Ok((CliConfig::default(), PathBuf::from(".")));
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let config: CliConfig = toml::from_str(&text)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."))
            .to_path_buf();
        Ok((config, base))
    }

    /// Points every seed in the config at `seed`.
    pub fn apply_seed(&mut self, seed: u64) {
        self.pipeline.split.seed = seed;
        self.retrieval.seed = seed;
        self.generation.seed = seed;
        if let Some(e) = &mut self.experiment {
            e.seed = seed;
            e.retrieval.seed = seed;
            e.generation.seed = seed;
        }
    }
}
