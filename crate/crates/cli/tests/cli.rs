use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use babble_core::trainer::strip_wall_time;

const BIN: &str = env!("CARGO_BIN_EXE_babble");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn babble")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn help_exits_zero_and_names_all_subcommands() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for sub in ["gen-corpus", "train", "matrix", "probe", "report"] {
        assert!(text.contains(sub), "--help lacks {sub}: {text}");
    }
}

#[test]
fn train_help_documents_defaults() {
    let o = run(&["train", "--help"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for needle in [
        "default: 8",
        "default: 0.001",
        "default: 0.9",
        "default: 0.999",
        "default: 1e-8",
        "default: 300",
        "default: 20",
        "default: true",
        "default: 64 desk, 256 paper",
        "default: 4",
        "default: 32",
        "default: 0.25",
        "default: desk",
        "default: RS",
        "default: 1",
    ] {
        assert!(text.contains(needle), "train --help lacks {needle:?}:\n{text}");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["train", "--bogus"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let o = run(&["gen-corpus", "--n", "10"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn gen_corpus_is_deterministic_and_reports_split() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rs.corpus");
    let o = run(&["gen-corpus", "--n", "20", "--seed", "7", "--out", path_str(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("13/3/4"), "split sizes: {}", stdout(&o));
    let first = fs::read(&out).unwrap();

    let o2 = run(&[
        "gen-corpus",
        "--n",
        "20",
        "--seed",
        "7",
        "--out",
        path_str(&out),
        "--force",
    ]);
    assert_eq!(code(&o2), 0);
    assert_eq!(first, fs::read(&out).unwrap(), "regeneration changed bytes");

    let o3 = run(&["gen-corpus", "--n", "20", "--out", path_str(&out)]);
    assert_eq!(code(&o3), 1, "overwrite without --force must fail");
    assert!(stderr(&o3).contains("--force"));
}

#[test]
fn gen_corpus_too_small_names_the_empty_split() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.corpus");
    let o = run(&["gen-corpus", "--n", "3", "--out", path_str(&out)]);
    assert_eq!(code(&o), 1);
    assert!(
        stderr(&o).contains("split would be empty"),
        "stderr: {}",
        stderr(&o)
    );
    assert!(!out.exists());
}

fn gen_small_corpus(dir: &Path) -> std::path::PathBuf {
    let corpus = dir.join("rs.corpus");
    let o = run(&[
        "gen-corpus",
        "--n",
        "12",
        "--seed",
        "7",
        "--out",
        path_str(&corpus),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    corpus
}

#[test]
fn train_writes_run_dir_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen_small_corpus(dir.path());
    let run1 = dir.path().join("run1");
    let run2 = dir.path().join("run2");
    for out in [&run1, &run2] {
        let o = run(&[
            "train",
            "--corpus",
            path_str(&corpus),
            "--out",
            path_str(out),
            "--seed",
            "3",
            "--max-epochs",
            "2",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for name in ["config.json", "metrics.csv", "epoch-1.json", "best.json", "final.json"] {
        assert!(run1.join(name).exists(), "missing {name}");
    }
    let m1 = strip_wall_time(&fs::read_to_string(run1.join("metrics.csv")).unwrap());
    let m2 = strip_wall_time(&fs::read_to_string(run2.join("metrics.csv")).unwrap());
    assert_eq!(m1, m2, "same seed, different metrics");
    assert_eq!(
        fs::read(run1.join("final.json")).unwrap(),
        fs::read(run2.join("final.json")).unwrap(),
        "same seed, different final checkpoint"
    );
}

#[test]
fn train_refuses_nonempty_dir_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen_small_corpus(dir.path());
    let out = dir.path().join("run");
    let args = [
        "train",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&out),
        "--max-epochs",
        "1",
    ];
    assert_eq!(code(&run(&args)), 0);
    let blocked = run(&args);
    assert_eq!(code(&blocked), 1);
    assert!(stderr(&blocked).contains("--force"));
    let mut forced: Vec<&str> = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&run(&forced)), 0);
}

#[test]
fn config_file_is_merged_under_flags_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen_small_corpus(dir.path());

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"max_epochs\": 3, \"max_epoch\": 3}\n").unwrap();
    let o = run(&[
        "train",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&dir.path().join("rb")),
        "--config",
        path_str(&bad),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("max_epoch"), "stderr: {}", stderr(&o));

    let good = dir.path().join("good.json");
    fs::write(&good, "{\"max_epochs\": 3, \"seed\": 9}\n").unwrap();

    // file alone: 3 epochs
    let rf = dir.path().join("rf");
    let o = run(&[
        "train",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&rf),
        "--config",
        path_str(&good),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines = fs::read_to_string(rf.join("metrics.csv")).unwrap().lines().count();
    assert_eq!(lines, 1 + 3);

    // flag beats file: 2 epochs
    let rg = dir.path().join("rg");
    let o = run(&[
        "train",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&rg),
        "--config",
        path_str(&good),
        "--max-epochs",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines = fs::read_to_string(rg.join("metrics.csv")).unwrap().lines().count();
    assert_eq!(lines, 1 + 2);
}

#[test]
fn probe_on_a_one_epoch_run_yields_identical_probes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen_small_corpus(dir.path());
    let out = dir.path().join("run");
    let o = run(&[
        "train",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&out),
        "--max-epochs",
        "1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["probe", "--run", path_str(&out), "--corpus", path_str(&corpus)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    for name in ["offset-bins.csv", "offset-samples.csv", "correctness.csv", "artic-recovery.csv"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    // epoch-1 and final checkpoints coincide, so the two probes must agree
    // in everything but the epoch tag
    let bins = fs::read_to_string(out.join("offset-bins.csv")).unwrap();
    let rows: Vec<&str> = bins.lines().skip(1).collect();
    assert_eq!(rows.len() % 2, 0);
    let half = rows.len() / 2;
    let strip_tag = |line: &str| line.split_once(',').unwrap().1.to_string();
    for i in 0..half {
        assert_eq!(strip_tag(rows[i]), strip_tag(rows[half + i]), "row {i}");
    }
}

#[test]
fn report_concatenates_runs_and_handles_zero_runs() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    fs::create_dir(&runs).unwrap();

    let o = run(&["report", "--runs", path_str(&runs)]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        stdout(&o),
        "speaker,seed,epoch,rmse_forward,rmse_inverse,train_loss_f,train_loss_g,wall_time_s\n"
    );

    let corpus = gen_small_corpus(dir.path());
    let o = run(&[
        "train",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&runs.join("r1")),
        "--max-epochs",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = dir.path().join("report.csv");
    let o = run(&["report", "--runs", path_str(&runs), "--out", path_str(&report)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 1 + 2);
    for line in text.lines().skip(1) {
        assert!(line.starts_with("RS,1,"), "row key: {line}");
    }
}

#[test]
fn matrix_single_cell_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("m");
    let o = run(&[
        "matrix",
        "--dir",
        path_str(&root),
        "--speakers",
        "RS",
        "--seeds",
        "1",
        "--n",
        "10",
        "--max-epochs",
        "1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(root.join("corpora/rs.corpus").exists());
    assert!(root.join("runs/rs-seed1/final.json").exists());
    let summary = fs::read_to_string(root.join("matrix-summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 2, "header plus one row: {summary}");
    assert_eq!(lines[0], "epoch,speaker,seed,correctness");
    assert!(lines[1].starts_with("1,RS,1,"));
}

#[test]
fn runtime_failures_exit_two() {
    let o = run(&[
        "train",
        "--corpus",
        "/nonexistent/nowhere.corpus",
        "--out",
        "/tmp/babble-test-never-created",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_speaker_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "gen-corpus",
        "--speaker",
        "S9",
        "--n",
        "10",
        "--out",
        path_str(&dir.path().join("x.corpus")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("S9"));
}
