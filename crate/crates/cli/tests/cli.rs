use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_replysuggest"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cli(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = r#"
toxic_words = ["toxicword", "giftwort"]

[pipeline]
response_min_count = 20
response_max_size = 3

[experiment]
model = "retrieval"
setting = "monolingual"
train_languages = ["en"]
eval_language = "en"
seed = 5
max_eval_examples = 10
response_min_count = 20
response_max_size = 3

[experiment.retrieval]
dim = 16
batch_size = 32
epochs = 1

[experiment.data.en]
train = "corpus/en/train.jsonl"
test = "corpus/en/test.jsonl"
responses = "corpus/en/responses.tsv"
"#;

#[test]
fn corpus_to_suggestions() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.toml"), CONFIG).unwrap();
    let dump = fixtures().join("dump.jsonl");
    let dump = dump.to_str().unwrap();
    let langid_train = fixtures().join("langid_train.tsv");

    ok(
        dir,
        &[
            "train-langid",
            "--input",
            langid_train.to_str().unwrap(),
            "--out-dir",
            "model",
        ],
    );
    assert!(dir.join("model/langid.tsv").exists());

    let counters: serde_json::Value = serde_json::from_str(&ok(
        dir,
        &[
            "--config",
            "run.toml",
            "ingest",
            "--dump",
            dump,
            "--langid",
            "model/langid.tsv",
            "--out-dir",
            "corpus",
        ],
    ))
    .unwrap();
    assert_eq!(counters["comments"], 1008);
    for name in ["train.jsonl", "valid.jsonl", "test.jsonl", "responses.tsv"] {
        assert!(dir.join("corpus/en").join(name).exists(), "{name}");
    }

    let candidates: serde_json::Value =
        serde_json::from_str(&ok(dir, &["pairs", "--dump", dump, "--out-dir", "step"])).unwrap();
    assert_eq!(candidates["malformed"], 5);
    ok(
        dir,
        &[
            "--config",
            "run.toml",
            "filter",
            "--pairs",
            "step/candidates.jsonl",
            "--langid",
            "model/langid.tsv",
            "--out-dir",
            "step",
        ],
    );
    ok(
        dir,
        &["split", "--pairs", "step/pairs.jsonl", "--out-dir", "step"],
    );
    let stats: serde_json::Value =
        serde_json::from_str(&ok(dir, &["stats", "step/en/train.jsonl"])).unwrap();
    assert!(stats.is_object());

    let metrics: serde_json::Value = serde_json::from_str(&ok(
        dir,
        &["--config", "run.toml", "eval", "--out-dir", "run"],
    ))
    .unwrap();
    assert!(metrics["mrr"].as_f64().is_some_and(|m| m > 0.0 && m <= 1.0));
    assert!(dir.join("run/report.json").exists() && dir.join("run/timing.json").exists());

    let table = ok(dir, &["compare", "run/report.json"]);
    assert!(
        table.contains("| en |") || table.contains("| en"),
        "{table}"
    );

    let lines = ok(
        dir,
        &["suggest", "--run", "run", "-k", "2", "thanks", "a", "lot"],
    );
    let lines: Vec<&str> = lines.lines().collect();
    assert_eq!(lines.len(), 2);
    for (i, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        assert_eq!(fields[0], (i + 1).to_string());
        assert!(fields[1].parse::<f64>().is_ok());
        assert!(!fields[2].is_empty());
    }
    assert_eq!(
        ok(dir, &["suggest", "--run", "run", "-k", "2", "thanks a lot"])
            .lines()
            .count(),
        2
    );
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(cli(dir, &["--help"]).status.code(), Some(0));
    assert_eq!(cli(dir, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(cli(dir, &["eval"]).status.code(), Some(1));

    fs::write(dir.join("bad.toml"), "unknown_key = 1\n").unwrap();
    let out = cli(dir, &["--config", "bad.toml", "stats"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    assert_eq!(cli(dir, &["stats", "missing.jsonl"]).status.code(), Some(2));
    fs::write(dir.join("broken.jsonl"), "{not json\n").unwrap();
    assert_eq!(cli(dir, &["stats", "broken.jsonl"]).status.code(), Some(2));
    fs::create_dir(dir.join("empty_run")).unwrap();
    assert_eq!(
        cli(dir, &["suggest", "--run", "empty_run", "hi"])
            .status
            .code(),
        Some(2)
    );
}
