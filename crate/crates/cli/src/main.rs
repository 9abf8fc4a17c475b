mod config;
mod exit;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use reply_suggest::corpus::{
    apply_filters, assign_language, build_pairs, build_response_set, corpus_stats, parse_dump,
    read_pairs, run_pipeline, split, write_pairs, CandidatePair, DropReason, KeywordScorer,
    LanguageVerdict, MessagePair, Scorers, SplitName, ToxicityScorer, Verdict,
};
use reply_suggest::generation::train_seq2seq;
use reply_suggest::harness::{compare, run_experiment, write_atomic, RunReport, Suggester};
use reply_suggest::langid::LangIdModel;
use reply_suggest::retrieval::{self, TokenPair};
use reply_suggest::text;

use config::CliConfig;
use exit::{Context, Failure};

#[derive(Parser)]
#[command(
    name = "replysuggest",
    version,
    about = "Multilingual reply suggestion: corpus building, training, evaluation"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full corpus build: pairs, filters, language labels, splits, response sets.
    Ingest {
        #[arg(long)]
        dump: PathBuf,
        /// Language-id model written by `train-langid`.
        #[arg(long)]
        langid: PathBuf,
    },
    /// Extracts parent/child candidate pairs from a dump.
    Pairs {
        #[arg(long)]
        dump: PathBuf,
    },
    /// Filters candidate pairs and labels their language.
    Filter {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        langid: PathBuf,
    },
    /// Splits labeled pairs per language into train, valid and test.
    Split {
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Builds the response set of one language from training pairs.
    ResponseSet {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        lang: String,
    },
    /// Trains the language identifier from `language<TAB>text` lines.
    TrainLangid {
        #[arg(long)]
        input: PathBuf,
    },
    /// Trains a dual encoder on pairs.
    TrainRetrieval {
        #[arg(long)]
        pairs: Vec<PathBuf>,
    },
    /// Trains an encoder-decoder on pairs.
    TrainGeneration {
        #[arg(long)]
        pairs: Vec<PathBuf>,
    },
    /// Runs the `[experiment]` section of the configuration.
    Eval,
    /// Tabulates run reports.
    Compare {
        reports: Vec<PathBuf>,
        /// Print JSON instead of a markdown table.
        #[arg(long)]
        json: bool,
    },
    /// Suggests replies with a trained run directory.
    Suggest {
        /// Directory written by `eval`.
        #[arg(long)]
        run: PathBuf,
        #[arg(short, long, default_value_t = 3)]
        k: usize,
        /// Read messages from stdin, one per line.
        #[arg(long)]
        interactive: bool,
        message: Vec<String>,
    },
    /// Counts examples and tokens per language.
    Stats { pairs: Vec<PathBuf> },
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).context(path.display())
}

fn load_pairs(path: &Path) -> Result<Vec<MessagePair>, Failure> {
    read_pairs(open(path)?).context(path.display())
}

fn save_pairs(path: &Path, pairs: &[MessagePair]) -> Result<(), Failure> {
    let mut bytes = Vec::new();
    write_pairs(&mut bytes, pairs)?;
    Ok(write_atomic(path, &bytes)?)
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_langid(path: &Path) -> Result<LangIdModel, Failure> {
    LangIdModel::load(open(path)?).context(path.display())
}

struct Toxicity {
    primary: Option<KeywordScorer>,
    secondary: Option<KeywordScorer>,
}

impl Toxicity {
    fn new(config: &CliConfig) -> Self {
        let scorer =
            |words: &Vec<String>| (!words.is_empty()).then(|| KeywordScorer::new(words, 1.0));
        Toxicity {
            primary: scorer(&config.toxic_words),
            secondary: scorer(&config.secondary_toxic_words),
        }
    }

    fn scorers(&self) -> Scorers<'_> {
        Scorers {
            primary: self.primary.as_ref().map(|s| s as &dyn ToxicityScorer),
            secondary: self.secondary.as_ref().map(|s| s as &dyn ToxicityScorer),
        }
    }
}

fn tokenized(pairs: &[MessagePair]) -> Vec<TokenPair> {
    pairs
        .iter()
        .map(|p| {
            (
                text::tokenize(&p.message, &p.language),
                text::tokenize(&p.reply, &p.language),
            )
        })
        .collect()
}

fn write_losses(dir: &Path, losses: &[f64]) -> Result<(), Failure> {
    let curve: String = losses
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{i}\t{l}\n"))
        .collect();
    Ok(write_atomic(&dir.join("losses.tsv"), curve.as_bytes())?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (mut config, base_dir) = CliConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.apply_seed(seed);
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config(format!("cannot start {n} threads: {e}")))?;
    }
    let out = &cli.out_dir;
    fs::create_dir_all(out).context(out.display())?;

    match cli.command {
        Command::Ingest { dump, langid } => {
            let detector = load_langid(&langid)?;
            let toxicity = Toxicity::new(&config);
            let output = run_pipeline(
                open(&dump)?,
                &config.pipeline,
                &detector,
                toxicity.scorers(),
            )?;
            output.write_to(out)?;
            print_json(&output.manifest.counters)?;
        }
        Command::Pairs { dump } => {
            let mut reader = parse_dump(open(&dump)?);
            let comments = reader
                .by_ref()
                .collect::<io::Result<Vec<_>>>()
                .context(dump.display())?;
            let (pairs, stats) = build_pairs(&comments);
            let mut bytes = Vec::new();
            for p in &pairs {
                serde_json::to_writer(&mut bytes, p)?;
                bytes.push(b'\n');
            }
            write_atomic(&out.join("candidates.jsonl"), &bytes)?;
            print_json(&serde_json::json!({
                "comments": comments.len(),
                "malformed": reader.malformed(),
                "pairs": stats.pairs,
                "orphans": stats.orphans,
                "empty_text": stats.empty_text,
            }))?;
        }
        Command::Filter { pairs, langid } => {
            let detector = load_langid(&langid)?;
            config.pipeline.filter.validate()?;
            let toxicity = Toxicity::new(&config);
            let mut kept = Vec::new();
            let mut dropped: BTreeMap<DropReason, usize> = BTreeMap::new();
            let mut scorer_errors = 0;
            for (i, line) in open(&pairs)?.lines().enumerate() {
                let line = line.context(pairs.display())?;
                if line.trim().is_empty() {
                    continue;
                }
                let candidate: CandidatePair = serde_json::from_str(&line).map_err(|e| {
                    Failure::data(format!("{} line {}: {e}", pairs.display(), i + 1))
                })?;
                match apply_filters(&candidate, &config.pipeline.filter, toxicity.scorers()) {
                    Verdict::Drop(reason) => {
                        *dropped.entry(reason).or_default() += 1;
                        continue;
                    }
                    Verdict::ScorerFailed { kept: false } => {
                        scorer_errors += 1;
                        continue;
                    }
                    Verdict::ScorerFailed { kept: true } => scorer_errors += 1,
                    Verdict::Keep => {}
                }
                match assign_language(
                    &candidate,
                    &detector,
                    config.pipeline.filter.lang_confidence_min,
                )? {
                    LanguageVerdict::Labeled(pair) => kept.push(pair),
                    LanguageVerdict::Drop(reason) => *dropped.entry(reason).or_default() += 1,
                }
            }
            save_pairs(&out.join("pairs.jsonl"), &kept)?;
            print_json(
                &serde_json::json!({ "kept": kept.len(), "dropped": dropped, "scorer_errors": scorer_errors }),
            )?;
        }
        Command::Split { pairs } => {
            let mut by_language: BTreeMap<String, Vec<MessagePair>> = BTreeMap::new();
            for p in load_pairs(&pairs)? {
                by_language.entry(p.language.clone()).or_default().push(p);
            }
            let mut sizes = BTreeMap::new();
            for (lang, items) in by_language {
                let splits = split(items, &config.pipeline.split)?;
                let dir = out.join(&lang);
                fs::create_dir_all(&dir).context(dir.display())?;
                for name in SplitName::ALL {
                    save_pairs(
                        &dir.join(format!("{}.jsonl", name.as_str())),
                        splits.get(name),
                    )?;
                }
                sizes.insert(
                    lang,
                    [splits.train.len(), splits.valid.len(), splits.test.len()],
                );
            }
            print_json(&sizes)?;
        }
        Command::ResponseSet { pairs, lang } => {
            let all = load_pairs(&pairs)?;
            let total = all.len();
            let train: Vec<MessagePair> = all.into_iter().filter(|p| p.language == lang).collect();
            if train.len() < total {
                log::warn!("ignoring {} pairs not labeled {lang}", total - train.len());
            }
            let set = build_response_set(
                &train,
                config.pipeline.response_min_count,
                config.pipeline.response_max_size,
                &lang,
            )?;
            let mut bytes = Vec::new();
            set.write_tsv(&mut bytes)?;
            write_atomic(&out.join("responses.tsv"), &bytes)?;
            println!("{} responses", set.len());
        }
        Command::TrainLangid { input } => {
            let mut labeled = Vec::new();
            for (i, line) in open(&input)?.lines().enumerate() {
                let line = line.context(input.display())?;
                if line.trim().is_empty() {
                    continue;
                }
                let (lang, text) = line.split_once('\t').ok_or_else(|| {
                    Failure::data(format!(
                        "{} line {}: expected language<TAB>text",
                        input.display(),
                        i + 1
                    ))
                })?;
                labeled.push((text.to_string(), lang.to_string()));
            }
            let model = LangIdModel::train_with(
                &labeled,
                config.langid.ngram_order,
                config.langid.smoothing,
            )?;
            let mut bytes = Vec::new();
            model.save(&mut bytes)?;
            write_atomic(&out.join("langid.tsv"), &bytes)?;
            println!("trained on {} texts", labeled.len());
        }
        Command::TrainRetrieval { pairs } => {
            let mut all = Vec::new();
            for p in &pairs {
                all.extend(load_pairs(p)?);
            }
            let outcome = retrieval::train(&tokenized(&all), &config.retrieval)?;
            write_atomic(&out.join("encoder.bin"), &outcome.model.to_bytes())?;
            write_losses(out, &outcome.losses)?;
            println!(
                "{} steps, final loss {:?}",
                outcome.losses.len(),
                outcome.losses.last()
            );
        }
        Command::TrainGeneration { pairs } => {
            let mut all = Vec::new();
            for p in &pairs {
                all.extend(load_pairs(p)?);
            }
            let outcome = train_seq2seq(&tokenized(&all), &config.generation)?;
            let mut bytes = Vec::new();
            outcome.model.write(&mut bytes)?;
            write_atomic(&out.join("seq2seq.bin"), &bytes)?;
            write_losses(out, &outcome.losses)?;
            println!(
                "{} steps, final loss {:?}",
                outcome.losses.len(),
                outcome.losses.last()
            );
        }
        Command::Eval => {
            let experiment = config
                .experiment
                .as_ref()
                .ok_or_else(|| Failure::config("the configuration has no [experiment] section"))?;
            let outcome = run_experiment(experiment, &base_dir)?;
            outcome.write_to(out)?;
            print_json(&outcome.report.metrics.to_flat())?;
        }
        Command::Compare { reports, json } => {
            let mut loaded = Vec::new();
            for path in &reports {
                let report: RunReport =
                    serde_json::from_reader(open(path)?).context(path.display())?;
                loaded.push(report);
            }
            let table = compare(&loaded)?;
            if json {
                print_json(&table)?;
            } else {
                print!("{}", table.to_markdown());
            }
        }
        Command::Suggest {
            run,
            k,
            interactive,
            message,
        } => {
            let suggester = Suggester::load(&run)?;
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            let answer = |text: &str, lock: &mut io::StdoutLock| -> Result<(), Failure> {
                for line in suggester.suggest(text, k)? {
                    writeln!(lock, "{line}")?;
                }
                Ok(())
            };
            if !message.is_empty() {
                answer(&message.join(" "), &mut lock)?;
            }
            if interactive {
                for line in io::stdin().lock().lines() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    answer(&line, &mut lock)?;
                    writeln!(lock)?;
                    lock.flush()?;
                }
            } else if message.is_empty() {
                return Err(Failure::config("give a message or --interactive"));
            }
        }
        Command::Stats { pairs } => {
            let mut all = Vec::new();
            for p in &pairs {
                all.extend(load_pairs(p)?);
            }
            print_json(&corpus_stats(&all))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            failure.exit_code()
        }
    }
}
