use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array1;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelKind, Protocol, Setting, TrainSource};
use super::oversample::oversample;
use super::HarnessError;
use crate::binio::sha256_hex;
use crate::corpus::{read_pairs, MessagePair, ResponseSet};
use crate::generation::{
    beam_search, corpus_log_prob, train_seq2seq, DecodeConfig, Example, Seq2SeqModel,
};
use crate::metrics::{self, best_of_k, MetricReport, RougeScore, TokenSeq};
use crate::retrieval::{self, top_k, DualEncoder, ResponseIndex, Side, TextEncoder, TokenPair};
use crate::text;

/// Report file name inside a run directory.
pub const REPORT: &str = "report.json";
/// Wall-clock sidecar; kept apart so reports stay byte-identical.
pub const TIMING: &str = "timing.json";
pub const LOSS_CURVE: &str = "losses.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileRole {
    Train,
    Test,
    Responses,
    Model,
}

/// One file the run opened, with the path as written in the config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRead {
    pub path: String,
    pub role: FileRole,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<TrainSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    /// Set when the model was loaded instead of trained.
    pub loaded_from: Option<String>,
    /// Training examples in one epoch, after oversampling.
    pub examples: usize,
    pub steps: usize,
    pub first_loss: Option<f64>,
    pub final_loss: Option<f64>,
    /// sha256 of the serialized parameters.
    pub params_hash: String,
    pub loss_curve: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: ModelKind,
    pub setting: Setting,
    pub train_languages: Vec<String>,
    pub eval_language: String,
    /// The eval language's own organic training data was not used.
    pub cross_lingual: bool,
    pub protocol: Protocol,
    pub metrics: MetricReport,
    /// Metric name to the reason it is missing.
    pub absent: BTreeMap<String, String>,
    /// Suggestions that were empty after detokenization.
    pub empty_suggestions: usize,
    pub notes: Vec<String>,
    pub files_read: Vec<FileRead>,
    pub train: TrainSummary,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub train_seconds: f64,
    pub eval_seconds: f64,
    pub train_examples_per_second: f64,
    pub eval_examples_per_second: f64,
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    Retrieval {
        model: DualEncoder,
        index: ResponseIndex,
    },
    Generation {
        model: Seq2SeqModel,
        decode: DecodeConfig,
    },
}

impl TrainedModel {
    pub fn params_hash(&self) -> String {
        match self {
            TrainedModel::Retrieval { model, .. } => model.params_hash(),
            TrainedModel::Generation { model, .. } => {
                let mut bytes = Vec::new();
                model.write(&mut bytes).expect("writing to memory");
                sha256_hex(&bytes)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub timing: Timing,
    pub losses: Vec<f64>,
    pub model: TrainedModel,
}

/// Opens files relative to a base directory and logs every read.
struct Reader<'a> {
    base: &'a Path,
    log: Vec<FileRead>,
}

impl Reader<'_> {
    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }

    fn record(
        &mut self,
        path: &Path,
        role: FileRole,
        language: &str,
        source: Option<TrainSource>,
    ) -> PathBuf {
        self.log.push(FileRead {
            path: path.display().to_string(),
            role,
            language: language.to_string(),
            source,
        });
        self.resolve(path)
    }

    fn pairs(
        &mut self,
        path: &Path,
        role: FileRole,
        language: &str,
        source: Option<TrainSource>,
    ) -> Result<Vec<MessagePair>, HarnessError> {
        let full = self.record(path, role, language, source);
        let file = File::open(&full).map_err(|e| HarnessError::io(&full, e))?;
        Ok(read_pairs(BufReader::new(file))?)
    }
}

fn tokenize_pairs(pairs: &[MessagePair], language: &str) -> Vec<TokenPair> {
    pairs
        .iter()
        .map(|p| {
            (
                text::tokenize(&p.message, language),
                text::tokenize(&p.reply, language),
            )
        })
        .collect()
}

fn artifact_error(path: &Path, e: std::io::Error) -> HarnessError {
    let sha256 = std::fs::read(path)
        .map(|b| sha256_hex(&b))
        .unwrap_or_else(|_| "unreadable".into());
    HarnessError::Artifact {
        path: path.to_path_buf(),
        sha256,
        reason: e.to_string(),
    }
}

/// Trains (or loads) the configured model on the setting's training data
/// and evaluates it on the eval language's test split. Relative paths in
/// the config resolve against `base_dir`.
pub fn run_experiment(
    config: &ExperimentConfig,
    base_dir: &Path,
) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    let mut reader = Reader {
        base: base_dir,
        log: Vec::new(),
    };
    let eval = config.eval_language.as_str();
    let eval_data = &config.data[eval];
    let mut notes = Vec::new();

    let responses = match &eval_data.responses {
        Some(path) => {
            let full = reader.record(path, FileRole::Responses, eval, None);
            let file = File::open(&full).map_err(|e| HarnessError::io(&full, e))?;
            let set = ResponseSet::read_tsv(
                BufReader::new(file),
                eval,
                config.response_min_count,
                config.response_max_size,
            )?;
            if set.is_empty() {
                return Err(HarnessError::Data(format!(
                    "response set {} is empty",
                    path.display()
                )));
            }
            Some(set)
        }
        None => None,
    };

    let train_start = Instant::now();
    let (trained, losses, examples, loaded_from) = match &config.model_path {
        Some(path) => {
            let full = reader.record(path, FileRole::Model, eval, None);
            let model = match config.model {
                ModelKind::Retrieval => {
                    let model = DualEncoder::load(&full).map_err(|e| artifact_error(&full, e))?;
                    let index = ResponseIndex::build(&model, responses.clone().expect("validated"));
                    TrainedModel::Retrieval { model, index }
                }
                ModelKind::Generation => {
                    let model = Seq2SeqModel::load(&full).map_err(|e| artifact_error(&full, e))?;
                    TrainedModel::Generation {
                        model,
                        decode: config.decode,
                    }
                }
            };
            (model, Vec::new(), 0, Some(path.display().to_string()))
        }
        None => {
            let pairs = training_pairs(config, &mut reader)?;
            if pairs.is_empty() {
                return Err(HarnessError::Data("no training pairs".into()));
            }
            log::info!("training {:?} on {} pairs", config.model, pairs.len());
            let (model, losses) = match config.model {
                ModelKind::Retrieval => {
                    let out = retrieval::train(&pairs, &config.retrieval)?;
                    let index =
                        ResponseIndex::build(&out.model, responses.clone().expect("validated"));
                    (
                        TrainedModel::Retrieval {
                            model: out.model,
                            index,
                        },
                        out.losses,
                    )
                }
                ModelKind::Generation => {
                    let out = train_seq2seq(&pairs, &config.generation)?;
                    (
                        TrainedModel::Generation {
                            model: out.model,
                            decode: config.decode,
                        },
                        out.losses,
                    )
                }
            };
            (model, losses, pairs.len(), None)
        }
    };
    let train_seconds = train_start.elapsed().as_secs_f64();

    let test_path = eval_data.test.as_ref().expect("validated");
    let mut test = reader.pairs(test_path, FileRole::Test, eval, None)?;
    if let Some(cap) = config.max_eval_examples {
        test.truncate(cap);
    }
    if test.is_empty() {
        return Err(HarnessError::Data(format!(
            "no test pairs in {}",
            test_path.display()
        )));
    }
    let eval_start = Instant::now();
    let evaluation = match &trained {
        TrainedModel::Retrieval { model, index } => {
            evaluate_retrieval(model, index, &test, eval, &config.protocol, config.seed)?
        }
        TrainedModel::Generation { model, decode } => {
            evaluate_generation(model, decode, &test, eval, &config.protocol)?
        }
    };
    let eval_seconds = eval_start.elapsed().as_secs_f64();
    notes.extend(evaluation.notes);

    let rate = |n: usize, s: f64| if s > 0.0 { n as f64 / s } else { 0.0 };
    let batch_size = match config.model {
        ModelKind::Retrieval => config.retrieval.batch_size,
        ModelKind::Generation => config.generation.batch_size,
    };
    let timing = Timing {
        train_seconds,
        eval_seconds,
        train_examples_per_second: rate(losses.len() * batch_size, train_seconds),
        eval_examples_per_second: rate(test.len(), eval_seconds),
    };
    let report = RunReport {
        model: config.model,
        setting: config.setting,
        train_languages: config.train_languages.clone(),
        eval_language: eval.to_string(),
        cross_lingual: config.is_cross_lingual(),
        protocol: config.protocol,
        metrics: evaluation.metrics,
        absent: evaluation.absent,
        empty_suggestions: evaluation.empty_suggestions,
        notes,
        files_read: reader.log,
        train: TrainSummary {
            loaded_from,
            examples,
            steps: losses.len(),
            first_loss: losses.first().copied(),
            final_loss: losses.last().copied(),
            params_hash: trained.params_hash(),
            loss_curve: (!losses.is_empty()).then(|| LOSS_CURVE.to_string()),
        },
        config: config.clone(),
    };
    Ok(RunOutcome {
        report,
        timing,
        losses,
        model: trained,
    })
}

/// Tokenized training pairs for the setting. The multilingual mix is
/// oversampled once per run, so every epoch sees the same mix.
fn training_pairs(
    config: &ExperimentConfig,
    reader: &mut Reader,
) -> Result<Vec<TokenPair>, HarnessError> {
    let mut per_language = BTreeMap::new();
    for (lang, source) in config.training_sources() {
        let data = &config.data[&lang];
        let path = match source {
            TrainSource::Organic => data.train.as_ref(),
            TrainSource::Translated => data.translated_train.as_ref(),
        }
        .expect("validated");
        let pairs = reader.pairs(path, FileRole::Train, &lang, Some(source))?;
        per_language.insert(lang.clone(), tokenize_pairs(&pairs, &lang));
    }
    if config.setting == Setting::Multilingual {
        oversample(&per_language, config.seed)
    } else {
        Ok(per_language.into_values().next().unwrap_or_default())
    }
}

struct Evaluation {
    metrics: MetricReport,
    absent: BTreeMap<String, String>,
    empty_suggestions: usize,
    notes: Vec<String>,
}

/// ROUGE, BLEU and Dist over k suggestions per message.
struct SuggestionMetrics {
    rouge: RougeScore,
    bleu: f64,
    dist1: f64,
    dist2: f64,
    empty: usize,
}

fn suggestion_metrics(
    suggestions: &[Vec<TokenSeq>],
    references: &[TokenSeq],
    order: usize,
) -> Result<SuggestionMetrics, HarnessError> {
    let mut sums = [0.0; 3];
    let mut best = Vec::with_capacity(references.len());
    for (cands, reference) in suggestions.iter().zip(references) {
        let (i, score) = best_of_k(cands, reference)?;
        sums[0] += score.r1;
        sums[1] += score.r2;
        sums[2] += score.r3;
        best.push(cands[i].clone());
    }
    let n = references.len() as f64;
    let pooled: Vec<TokenSeq> = suggestions.iter().flatten().cloned().collect();
    Ok(SuggestionMetrics {
        rouge: RougeScore::from_components(sums[0] / n, sums[1] / n, sums[2] / n),
        bleu: metrics::bleu(&best, references, order)?,
        dist1: metrics::dist_n(&pooled, 1)?,
        dist2: metrics::dist_n(&pooled, 2)?,
        empty: pooled.iter().filter(|s| s.is_empty()).count(),
    })
}

/// Reference id used when ranking against sampled distractors.
const REFERENCE: usize = usize::MAX;

fn evaluate_retrieval(
    model: &DualEncoder,
    index: &ResponseIndex,
    test: &[MessagePair],
    language: &str,
    protocol: &Protocol,
    seed: u64,
) -> Result<Evaluation, HarnessError> {
    let responses = index.responses();
    let positions: Vec<Option<usize>> = test.iter().map(|p| responses.position(&p.reply)).collect();
    // Distractors come from one seeded stream, drawn in test order.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd157_7ac7);
    let wanted = protocol.mrr_candidates - 1;
    let distractors: Vec<Vec<usize>> = positions
        .iter()
        .map(|pos| {
            let pool = responses.len() - usize::from(pos.is_some());
            let mut picks = index::sample(&mut rng, pool, wanted.min(pool)).into_vec();
            if let Some(p) = *pos {
                picks.iter_mut().filter(|j| **j >= p).for_each(|j| *j += 1);
            }
            picks.sort_unstable();
            picks
        })
        .collect();
    let mut notes = Vec::new();
    if responses.len() < wanted {
        notes.push(format!(
            "response set has {} entries, so MRR ranks against fewer than {wanted} distractors",
            responses.len()
        ));
    }

    struct PerExample {
        suggestions: Vec<TokenSeq>,
        reference: TokenSeq,
        rank: usize,
        full_rank: Option<(usize, usize)>,
    }
    let per_example: Vec<PerExample> = test
        .par_iter()
        .zip(positions.par_iter())
        .zip(distractors.par_iter())
        .map(
            |((pair, pos), distractors)| -> Result<PerExample, HarnessError> {
                let message = text::tokenize(&pair.message, language);
                let suggestions = top_k(model, index, &message, protocol.k)?
                    .into_iter()
                    .map(|s| metrics::tokenize(&s.text, language))
                    .collect();
                let message_vec = model.encode(Side::Message, &message);
                let scores: Array1<f64> = index.scores(&message_vec);
                let reference_vec =
                    model.encode(Side::Reply, &text::tokenize(&pair.reply, language));
                let mut scored: Vec<(usize, f64)> =
                    vec![(REFERENCE, reference_vec.dot(&message_vec))];
                scored.extend(distractors.iter().map(|&j| (j, scores[j])));
                let rank = metrics::rank_reference(&scored, &REFERENCE)?;
                let full_rank = match *pos {
                    Some(p) => {
                        let all: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
                        Some((p, metrics::rank_reference(&all, &p)?))
                    }
                    None => None,
                };
                Ok(PerExample {
                    suggestions,
                    reference: metrics::tokenize(&pair.reply, language),
                    rank,
                    full_rank,
                })
            },
        )
        .collect::<Result<_, _>>()?;

    let suggestions: Vec<Vec<TokenSeq>> =
        per_example.iter().map(|e| e.suggestions.clone()).collect();
    let references: Vec<TokenSeq> = per_example.iter().map(|e| e.reference.clone()).collect();
    let m = suggestion_metrics(&suggestions, &references, protocol.bleu_order)?;
    let ranks: Vec<usize> = per_example.iter().map(|e| e.rank).collect();
    let full: Vec<(usize, usize)> = per_example.iter().filter_map(|e| e.full_rank).collect();
    let macro_mrr = metrics::macro_mrr(&full)?;
    let mut absent = BTreeMap::new();
    absent.insert(
        "perplexity".to_string(),
        "retrieval models do not assign token probabilities".to_string(),
    );
    if macro_mrr.is_none() {
        absent.insert(
            "macro_mrr".to_string(),
            "no test reference is in the response set".to_string(),
        );
    }
    Ok(Evaluation {
        metrics: MetricReport {
            rouge: m.rouge,
            bleu: Some(m.bleu),
            mrr: Some(metrics::mrr(&ranks)?),
            precision_at_1: Some(metrics::precision_at_1(&ranks)?),
            macro_mrr,
            dist1: m.dist1,
            dist2: m.dist2,
            perplexity: None,
            n_examples: test.len(),
        },
        absent,
        empty_suggestions: m.empty,
        notes,
    })
}

fn evaluate_generation(
    model: &Seq2SeqModel,
    decode: &DecodeConfig,
    test: &[MessagePair],
    language: &str,
    protocol: &Protocol,
) -> Result<Evaluation, HarnessError> {
    let config = DecodeConfig {
        beam_width: decode.beam_width.max(protocol.k),
        ..*decode
    };
    let per_example: Vec<(Vec<TokenSeq>, Example)> = test
        .par_iter()
        .map(|pair| -> Result<_, HarnessError> {
            let source = model.ids(&text::tokenize(&pair.message, language));
            let beam = beam_search(model, &source, &config)?;
            let suggestions = beam
                .iter()
                .take(protocol.k)
                .map(|h| metrics::tokenize(&model.detokenize(&h.tokens), language))
                .collect();
            let target = model.target_ids(&text::tokenize(&pair.reply, language));
            Ok((suggestions, (source, target)))
        })
        .collect::<Result<_, _>>()?;
    let suggestions: Vec<Vec<TokenSeq>> = per_example.iter().map(|e| e.0.clone()).collect();
    let references: Vec<TokenSeq> = test
        .iter()
        .map(|p| metrics::tokenize(&p.reply, language))
        .collect();
    let m = suggestion_metrics(&suggestions, &references, protocol.bleu_order)?;
    let examples: Vec<Example> = per_example.into_iter().map(|e| e.1).collect();
    let (log_prob, tokens) = corpus_log_prob(model, &examples)?;
    let mut absent = BTreeMap::new();
    for key in ["mrr", "precision_at_1", "macro_mrr"] {
        absent.insert(
            key.to_string(),
            "generative models do not rank a fixed response set".to_string(),
        );
    }
    Ok(Evaluation {
        metrics: MetricReport {
            rouge: m.rouge,
            bleu: Some(m.bleu),
            mrr: None,
            precision_at_1: None,
            macro_mrr: None,
            dist1: m.dist1,
            dist2: m.dist2,
            perplexity: Some(metrics::perplexity(log_prob, tokens)?),
            n_examples: test.len(),
        },
        absent,
        empty_suggestions: m.empty,
        notes: Vec::new(),
    })
}
