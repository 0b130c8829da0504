use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qg_core::training::Checkpoint;

fn qg(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qg"))
        .args(args)
        .env("QG_RUN_ROOT", root.join("runs"))
        .current_dir(root)
        .output()
        .expect("spawn qg")
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = qg(root, args);
    assert!(
        out.status.success(),
        "qg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn single_line_error(out: &Output, code: i32, class: &str) {
    assert_eq!(out.status.code(), Some(code));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error: {class}: ")), "{err}");
}

fn only_checkpoint(run: &Path) -> PathBuf {
    let mut v: Vec<PathBuf> = std::fs::read_dir(run.join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    v.pop().expect("a checkpoint")
}

#[test]
fn pipeline_memorizes_with_gold_first_word() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(
        root,
        &[
            "synth",
            "--count",
            "24",
            "--seed",
            "3",
            "--output",
            "raw.jsonl",
        ],
    );
    let pre = ok(
        root,
        &[
            "preprocess",
            "--train",
            "raw.jsonl",
            "--test",
            "raw.jsonl",
            "--out",
            "data",
        ],
    );
    assert!(pre.contains("train: 24 triples, 0 dropped"), "{pre}");
    ok(
        root,
        &[
            "train",
            "--data",
            "data",
            "--name",
            "memo",
            "--set",
            "epochs=600",
            "--set",
            "batch_size=8",
            "--set",
            "learning_rate=0.002",
            "--set",
            "word_dim=32",
            "--set",
            "train_first_token=gold_first_word",
        ],
    );
    let run = root.join("runs/memo");
    for f in ["config.txt", "vocab.txt", "pos.txt", "ner.txt", "train.log"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let config = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(config.contains("train_first_token = gold_first_word"));
    let ckpt = only_checkpoint(&run);
    let ckpt_s = ckpt.to_str().unwrap();

    let mut reports = Vec::new();
    for mode in ["predicted", "gold_type", "gold_first_word", "plain_bos"] {
        let hyp = format!("gen.{mode}.txt");
        ok(
            root,
            &[
                "generate",
                "--run",
                "runs/memo",
                "--checkpoint",
                ckpt_s,
                "--input",
                "data/test.jsonl",
                "--mode",
                mode,
                "--output",
                &hyp,
            ],
        );
        let table = ok(
            root,
            &["evaluate", "--hyp", &hyp, "--reference", "data/test.jsonl"],
        );
        assert!(table.contains(&format!("mode      {mode}")), "{table}");
        let report: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(root.join(format!("{hyp}.report.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(report["mode"], mode);
        reports.push(report);
    }
    let gold = &reports[2];
    assert_eq!(gold["bleu"][3].as_f64(), Some(100.0), "{gold}");
    assert!(gold["type_accuracy"].is_number());

    // Same checkpoint and input decode to the same bytes.
    ok(
        root,
        &[
            "generate",
            "--run",
            "runs/memo",
            "--checkpoint",
            ckpt_s,
            "--input",
            "data/test.jsonl",
            "--mode",
            "gold_first_word",
            "--output",
            "again.txt",
        ],
    );
    assert_eq!(
        std::fs::read(root.join("again.txt")).unwrap(),
        std::fs::read(root.join("gen.gold_first_word.txt")).unwrap()
    );

    ok(
        root,
        &[
            "average-checkpoints",
            "--output",
            "avg.ckpt",
            ckpt_s,
            ckpt_s,
            ckpt_s,
        ],
    );
    let avg = Checkpoint::load(root.join("avg.ckpt")).unwrap();
    assert_eq!(avg.params, Checkpoint::load(&ckpt).unwrap().params);
}

#[test]
fn nearest_averaging_reads_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(
        root,
        &[
            "synth",
            "--count",
            "12",
            "--seed",
            "4",
            "--output",
            "raw.jsonl",
        ],
    );
    ok(
        root,
        &[
            "preprocess",
            "--train",
            "raw.jsonl",
            "--dev",
            "raw.jsonl",
            "--out",
            "data",
        ],
    );
    let log = ok(
        root,
        &[
            "train",
            "--data",
            "data",
            "--name",
            "r",
            "--set",
            "epochs=4",
            "--set",
            "hidden_dim=8",
            "--set",
            "ff_dim=8",
            "--set",
            "word_dim=8",
            "--set",
            "batch_size=4",
            "--set",
            "max_len=8",
        ],
    );
    assert_eq!(log.lines().filter(|l| l.contains("dev_bleu4=")).count(), 4);
    assert!(!log.contains("dev_bleu4=-"));
    let out = ok(
        root,
        &[
            "average-checkpoints",
            "--output",
            "near.ckpt",
            "--nearest",
            "2",
            "--run",
            "runs/r",
        ],
    );
    assert_eq!(out.lines().filter(|l| l.starts_with("averaged")).count(), 2);
    assert!(Checkpoint::load(root.join("near.ckpt")).is_ok());

    // Resuming under a different config is refused.
    let ck = only_checkpoint(&root.join("runs/r"));
    let out = qg(
        root,
        &[
            "train",
            "--data",
            "data",
            "--resume",
            ck.to_str().unwrap(),
            "--set",
            "seed=9",
        ],
    );
    single_line_error(&out, 7, "bad checkpoint");
}

#[test]
fn gradcheck_passes_on_bundled_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck"]);
    let err: f64 = out
        .split("max_relative_error=")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-4, "{out}");
}

#[test]
fn failures_print_one_line_and_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let out = qg(root, &["train", "--data", "nowhere", "--set", "nope=1"]);
    single_line_error(&out, 2, "bad config");
    let out = qg(
        root,
        &["train", "--data", "nowhere", "--set", "batch_size=0"],
    );
    single_line_error(&out, 2, "bad config");
    let out = qg(
        root,
        &["evaluate", "--hyp", "missing.txt", "--reference", "x.jsonl"],
    );
    single_line_error(&out, 3, "missing file");
    std::fs::write(root.join("bad.jsonl"), "{\"sentence\": 3}\n").unwrap();
    let out = qg(
        root,
        &["preprocess", "--train", "bad.jsonl", "--out", "data"],
    );
    single_line_error(&out, 4, "bad data");
    std::fs::write(root.join("junk.ckpt"), b"not a checkpoint").unwrap();
    let out = qg(
        root,
        &["average-checkpoints", "--output", "o.ckpt", "junk.ckpt"],
    );
    single_line_error(&out, 7, "bad checkpoint");
}
