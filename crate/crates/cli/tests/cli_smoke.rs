//! End-to-end checks of the installed binary: argument parsing, exit codes,
//! stdout/stderr contracts, and output-directory behavior.

use std::path::Path;
use std::process::{Command, Output};

fn garcia(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_garcia"))
        .args(args)
        .current_dir(dir)
        .env("GARCIA_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn tiny_config(dir: &Path) -> String {
    let text = r#"
seed = 5
head_fraction = 0.25
k = 5

[scenario]
n_queries = 24
n_services = 14
n_trees = 2
max_depth = 3
sessions = 400
candidates_per_query = 6
correlation_rate = 0.7

[train]
epochs_pretrain = 1
epochs_finetune = 1
batch_size = 16

[train.hyper]
embed_dim = 8
h_levels = 3
"#;
    let path = dir.join("tiny.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn help_exits_zero_and_lists_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let out = garcia(&["--help"], dir.path());
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in [
        "gen-data",
        "build-graph",
        "pretrain",
        "finetune",
        "eval",
        "export",
        "retrieve",
        "ablate",
        "report",
    ] {
        assert!(text.contains(sub), "help lacks {sub}:\n{text}");
    }
}

#[test]
fn usage_errors_exit_one_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = garcia(&["no-such-command"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(!out.stderr.is_empty());

    let out = garcia(&["eval", "--data"], dir.path());
    assert_eq!(code(&out), 1);
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "seed = 3\nmystery = true\n").unwrap();
    let out = garcia(&["gen-data", "--config", "bad.toml"], dir.path());
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mystery"), "{err}");
}

#[test]
fn missing_data_directory_is_named_in_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = garcia(&["build-graph", "--data", "absent"], dir.path());
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("absent"), "{err}");
}

#[test]
fn gen_data_writes_dataset_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = garcia(&["gen-data", "--config", &cfg, "--out", "data"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "nodes.jsonl",
        "intentions.jsonl",
        "interactions.tsv",
        "correlations.tsv",
        "labels.tsv",
        "train.tsv",
        "val.tsv",
        "test.tsv",
        "gen_report.json",
        "config.resolved",
    ] {
        assert!(dir.path().join("data").join(name).is_file(), "{name} missing");
    }

    let again = garcia(&["gen-data", "--config", &cfg, "--out", "data"], dir.path());
    assert_eq!(code(&again), 1, "occupied --out must be refused");
}

#[test]
fn default_out_directory_is_timestamped_under_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = garcia(&["gen-data", "--config", &cfg], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let runs = dir.path().join("runs");
    let entries: Vec<String> = std::fs::read_dir(&runs)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(entries.len(), 1);
    assert!(entries[0].starts_with("gen-data-"), "{entries:?}");
}

#[test]
fn retrieve_prints_rank_id_score_lines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = garcia(&["gen-data", "--config", &cfg, "--out", "data"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = garcia(&["pretrain", "--config", &cfg, "--data", "data", "--out", "pre"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = garcia(
        &[
            "export",
            "--config",
            &cfg,
            "--data",
            "data",
            "--checkpoint",
            "pre/pretrained.ckpt",
            "--out",
            "emb",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let query = std::fs::read_to_string(dir.path().join("data/train.tsv"))
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .split('\t')
        .next()
        .unwrap()
        .to_string();
    let out = garcia(
        &[
            "retrieve",
            "--config",
            &cfg,
            "--data",
            "data",
            "--embeddings",
            "emb/embeddings.tsv",
            "--query",
            &query,
            "--k",
            "3",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "{text}");
    for (i, line) in lines.iter().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 3, "{line}");
        assert_eq!(cols[0], (i + 1).to_string());
        assert!(cols[1].starts_with('s'), "{line}");
        assert!(cols[2].parse::<f64>().is_ok(), "{line}");
    }

    let out = garcia(
        &[
            "retrieve",
            "--config",
            &cfg,
            "--data",
            "data",
            "--embeddings",
            "emb/embeddings.tsv",
            "--query",
            "q_nonexistent",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("q_nonexistent"));
}
