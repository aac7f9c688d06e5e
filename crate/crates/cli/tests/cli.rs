//! Binary-level checks: exit codes and byte-identical pipeline replays.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_topics-synth"))
}

fn write_tiny_config(path: &Path, out_dir: &Path) {
    let config = format!(
        r#"
seed = 11
deterministic = true
out_dir = "{}"

[api]
p = 0.05
k = 3
weeks = 3
taxonomy_size = 10

[population]
n_users = 250
n_archetypes = 5
zipf_exponent = 1.1
dirichlet_concentration = 0.3
persistence_rho = 0.8

[train]
types = 8
batch_size = 512
learning_rate = 0.3
epochs = 50
eval_every = 25

[sample]
n_users = 250
pad = true

[attack]
queries = 64
trials = 2

[validate]
distinct_weeks = 3
"#,
        out_dir.display()
    );
    std::fs::write(path, config).unwrap();
}

fn collect_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
}

#[test]
fn pipeline_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    let out = dir.path().join("run");
    write_tiny_config(&config, &out);

    let run = || {
        let status = bin()
            .args(["pipeline", "--config"])
            .arg(&config)
            .arg("--log-level")
            .arg("quiet")
            .status()
            .unwrap();
        assert!(status.success());
        collect_files(&out)
    };

    let first = run();
    let second = run();
    assert_eq!(
        first.iter().map(|(n, _)| n).collect::<Vec<_>>(),
        second.iter().map(|(n, _)| n).collect::<Vec<_>>()
    );
    for ((name, bytes_a), (_, bytes_b)) in first.iter().zip(&second) {
        assert_eq!(bytes_a, bytes_b, "{name} differs between replays");
    }
}

#[test]
fn fit_on_population_file_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let pop = dir.path().join("pop.jsonl");
    let status = bin()
        .args([
            "simulate",
            "--users",
            "50",
            "--taxonomy-size",
            "8",
            "--k",
            "2",
            "--weeks",
            "2",
            "--out-sequences",
        ])
        .arg(&pop)
        .arg("--log-level")
        .arg("quiet")
        .status()
        .unwrap();
    assert!(status.success());

    let status = bin()
        .args(["fit", "--stats-dir"])
        .arg(&pop)
        .args(["--types", "2", "--weeks", "2", "--epochs", "1", "--out-model"])
        .arg(dir.path().join("m.bin"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}

#[test]
fn sample_on_population_file_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let pop = dir.path().join("pop.jsonl");
    let status = bin()
        .args([
            "simulate",
            "--users",
            "20",
            "--taxonomy-size",
            "8",
            "--k",
            "2",
            "--weeks",
            "2",
            "--out-sequences",
        ])
        .arg(&pop)
        .arg("--log-level")
        .arg("quiet")
        .status()
        .unwrap();
    assert!(status.success());

    let status = bin()
        .args(["sample", "--model"])
        .arg(&pop)
        .args(["--n", "5", "--out"])
        .arg(dir.path().join("out.jsonl"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}

#[test]
fn missing_config_exits_2() {
    let status = bin().arg("pipeline").status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn bad_flag_value_exits_2() {
    let status = bin()
        .args(["simulate", "--users", "not-a-number", "--out-sequences", "x"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn sample_zero_users_writes_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    // build a minimal model via the library to keep this test fast
    let params = topics_synth::model::ModelParams::zeros(2, 2, 2, 6);
    let model_path = dir.path().join("model.bin");
    topics_synth::model::save_checkpoint(&params, 0, &model_path).unwrap();

    let out = dir.path().join("empty.jsonl");
    let status = bin()
        .args(["sample", "--model"])
        .arg(&model_path)
        .args(["--n", "0", "--out"])
        .arg(&out)
        .arg("--log-level")
        .arg("quiet")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "");
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let params = topics_synth::model::ModelParams::zeros(2, 2, 2, 6);
    let model_path = dir.path().join("model.bin");
    topics_synth::model::save_checkpoint(&params, 0, &model_path).unwrap();
    // truncate the parameter payload
    let bytes = std::fs::read(&model_path).unwrap();
    std::fs::write(&model_path, &bytes[..bytes.len() - 4]).unwrap();

    let status = bin()
        .args(["sample", "--model"])
        .arg(&model_path)
        .args(["--n", "5", "--out"])
        .arg(dir.path().join("out.jsonl"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}
