use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelKind;
use super::experiment::{RunOutcome, TrainedModel, LOSS_CURVE, REPORT, TIMING};
use super::HarnessError;
use crate::binio::sha256_hex;
use crate::generation::{beam_search, DecodeConfig, Seq2SeqModel};
use crate::retrieval::{top_k, DualEncoder, ResponseIndex};
use crate::text;

/// Manifest naming the model files of a run directory and their digests.
pub const ARTIFACT_MANIFEST: &str = "artifact.json";
const ENCODER_FILE: &str = "encoder.bin";
const INDEX_FILE: &str = "index.bin";
const SEQ2SEQ_FILE: &str = "seq2seq.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub model: ModelKind,
    pub language: String,
    pub params_hash: String,
    /// File name to sha256 of its bytes.
    pub files: BTreeMap<String, String>,
    pub decode: Option<DecodeConfig>,
}

/// Writes through a temporary sibling and renames it into place, so readers
/// never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        HarnessError::io(path, e)
    })
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, HarnessError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

impl RunOutcome {
    /// Writes the report, timing sidecar, loss curve and model files into
    /// `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let mut files = BTreeMap::new();
        let mut put = |name: &str, bytes: Vec<u8>| -> Result<(), HarnessError> {
            files.insert(name.to_string(), sha256_hex(&bytes));
            write_atomic(&dir.join(name), &bytes)
        };
        let decode = match &self.model {
            TrainedModel::Retrieval { model, index } => {
                put(ENCODER_FILE, model.to_bytes())?;
                let mut bytes = Vec::new();
                index
                    .write(&mut bytes)
                    .map_err(|e| HarnessError::io(dir.join(INDEX_FILE), e))?;
                put(INDEX_FILE, bytes)?;
                None
            }
            TrainedModel::Generation { model, decode } => {
                let mut bytes = Vec::new();
                model
                    .write(&mut bytes)
                    .map_err(|e| HarnessError::io(dir.join(SEQ2SEQ_FILE), e))?;
                put(SEQ2SEQ_FILE, bytes)?;
                Some(*decode)
            }
        };
        let manifest = ArtifactManifest {
            model: self.report.model,
            language: self.report.eval_language.clone(),
            params_hash: self.report.train.params_hash.clone(),
            files,
            decode,
        };
        write_atomic(&dir.join(ARTIFACT_MANIFEST), &json_bytes(&manifest)?)?;
        if !self.losses.is_empty() {
            let curve: String = self
                .losses
                .iter()
                .enumerate()
                .map(|(i, l)| format!("{i}\t{l}\n"))
                .collect();
            write_atomic(&dir.join(LOSS_CURVE), curve.as_bytes())?;
        }
        write_atomic(&dir.join(TIMING), &json_bytes(&self.timing)?)?;
        write_atomic(&dir.join(REPORT), &json_bytes(&self.report)?)
    }
}

/// One ranked reply.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuggestionLine {
    pub rank: usize,
    pub score: f64,
    pub text: String,
}

impl fmt::Display for SuggestionLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{:.6}\t{}", self.rank, self.score, self.text)
    }
}

/// A loaded model ready to answer messages.
#[derive(Debug, Clone)]
pub struct Suggester {
    model: TrainedModel,
    language: String,
}

fn artifact_bytes(
    dir: &Path,
    name: &str,
    expected: Option<&String>,
) -> Result<Vec<u8>, HarnessError> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| HarnessError::Artifact {
        path: path.clone(),
        sha256: "unreadable".into(),
        reason: e.to_string(),
    })?;
    let actual = sha256_hex(&bytes);
    match expected {
        Some(want) if *want == actual => Ok(bytes),
        Some(want) => Err(HarnessError::Artifact {
            path,
            sha256: actual,
            reason: format!("manifest expects sha256 {want}"),
        }),
        None => Err(HarnessError::Artifact {
            path,
            sha256: actual,
            reason: "file is not listed in the manifest".into(),
        }),
    }
}

impl Suggester {
    pub fn new(model: TrainedModel, language: &str) -> Self {
        Suggester {
            model,
            language: language.to_string(),
        }
    }

    /// Loads the model files named by a run directory's manifest, checking
    /// every digest first.
    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let manifest_path = dir.join(ARTIFACT_MANIFEST);
        let raw = fs::read(&manifest_path).map_err(|e| HarnessError::io(&manifest_path, e))?;
        let manifest: ArtifactManifest =
            serde_json::from_slice(&raw).map_err(|e| HarnessError::Artifact {
                path: manifest_path.clone(),
                sha256: sha256_hex(&raw),
                reason: e.to_string(),
            })?;
        let corrupt = |name: &str, bytes: &[u8], e: std::io::Error| HarnessError::Artifact {
            path: dir.join(name),
            sha256: sha256_hex(bytes),
            reason: e.to_string(),
        };
        let model = match manifest.model {
            ModelKind::Retrieval => {
                let enc = artifact_bytes(dir, ENCODER_FILE, manifest.files.get(ENCODER_FILE))?;
                let model = DualEncoder::read(&mut enc.as_slice())
                    .map_err(|e| corrupt(ENCODER_FILE, &enc, e))?;
                let idx = artifact_bytes(dir, INDEX_FILE, manifest.files.get(INDEX_FILE))?;
                let index = ResponseIndex::read(&mut idx.as_slice())
                    .map_err(|e| corrupt(INDEX_FILE, &idx, e))?;
                index
                    .check_fresh(&model)
                    .map_err(|e| HarnessError::Artifact {
                        path: dir.join(INDEX_FILE),
                        sha256: sha256_hex(&idx),
                        reason: e.to_string(),
                    })?;
                TrainedModel::Retrieval { model, index }
            }
            ModelKind::Generation => {
                let bytes = artifact_bytes(dir, SEQ2SEQ_FILE, manifest.files.get(SEQ2SEQ_FILE))?;
                let model = Seq2SeqModel::read(&mut bytes.as_slice())
                    .map_err(|e| corrupt(SEQ2SEQ_FILE, &bytes, e))?;
                TrainedModel::Generation {
                    model,
                    decode: manifest.decode.unwrap_or_default(),
                }
            }
        };
        Ok(Suggester {
            model,
            language: manifest.language,
        })
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn model(&self) -> &TrainedModel {
        &self.model
    }

    /// The `k` best replies, best first. Retrieval scores are dot products;
    /// generation scores are beam scores.
    pub fn suggest(&self, message: &str, k: usize) -> Result<Vec<SuggestionLine>, HarnessError> {
        let tokens = text::tokenize(message, &self.language);
        let scored: Vec<(f64, String)> = match &self.model {
            TrainedModel::Retrieval { model, index } => top_k(model, index, &tokens, k)?
                .into_iter()
                .map(|s| (s.score, s.text))
                .collect(),
            TrainedModel::Generation { model, decode } => {
                let config = DecodeConfig {
                    beam_width: decode.beam_width.max(k),
                    ..*decode
                };
                beam_search(model, &model.ids(&tokens), &config)?
                    .into_iter()
                    .take(k)
                    .map(|h| (h.score(config.alpha), model.detokenize(&h.tokens)))
                    .collect()
            }
        };
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(i, (score, text))| SuggestionLine {
                rank: i + 1,
                score,
                text,
            })
            .collect())
    }
}
