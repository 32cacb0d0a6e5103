//! End-to-end checks of the `owleye` binary.

use std::path::Path;
use std::process::{Command, Output};

fn owleye(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_owleye"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = owleye(args, cwd);
    assert!(
        out.status.success(),
        "owleye {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn dict_len(path: &Path) -> usize {
    owleye::dictionary::load_dictionary(path).unwrap().len()
}

/// Small synthetic collection plus a briefly trained checkpoint.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["synth", "--out", "data", "--nodes", "80", "--train", "2", "--aux", "2", "--seed", "4"], p);
    ok(
        &[
            "train", "--graph", "data/train0", "data/train1", "--out", "model.ckpt", "--d", "8", "--n-sup", "8",
            "--epochs", "3",
        ],
        p,
    );
    dir
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["--help"][..], &["--version"], &["score", "--help"], &["dict", "add", "--help"]] {
        let out = owleye(args, dir.path());
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["score", "--bogus"][..], &[], &["train"], &["score", "--checkpoint", "x"], &["nosuch"]] {
        let out = owleye(args, dir.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn validation_and_runtime_errors_are_distinguished() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("bad.toml"), "epochs = 3\nwidth = 2\n").unwrap();
    assert_eq!(owleye(&["eval", "--config", "bad.toml"], p).status.code(), Some(1));
    std::fs::write(p.join("missing.toml"), "train_dirs = [\"nowhere\"]\n").unwrap();
    assert_eq!(owleye(&["eval", "--config", "missing.toml"], p).status.code(), Some(1));
    let out = owleye(&["score", "--checkpoint", "none.ckpt", "--graph", "none"], p);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn scoring_is_byte_deterministic() {
    let dir = workspace();
    let p = dir.path();
    let score = |out: &str, seed: &str| {
        ok(&["score", "--checkpoint", "model.ckpt", "--graph", "data/test0", "--out", out, "--seed", seed], p);
        std::fs::read(p.join(out)).unwrap()
    };
    let a = score("a.csv", "1");
    assert_eq!(a, score("b.csv", "1"));
    assert_ne!(a, score("c.csv", "2"), "different pseudo-support draw");
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().next(), Some("node_id,score"));
    assert_eq!(text.lines().count(), 81);
}

#[test]
fn thread_count_does_not_change_scores() {
    let dir = workspace();
    let p = dir.path();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = Command::new(env!("CARGO_BIN_EXE_owleye"))
            .args(["score", "--checkpoint", "model.ckpt", "--graph", "data/test0", "--out"])
            .arg(format!("t{threads}.csv"))
            .env("OWLEYE_THREADS", threads)
            .current_dir(p)
            .output()
            .unwrap();
        assert!(out.status.success());
        outputs.push(std::fs::read(p.join(format!("t{threads}.csv"))).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn dict_add_appends_without_touching_the_checkpoint() {
    let dir = workspace();
    let p = dir.path();
    let before = std::fs::read(p.join("model.ckpt")).unwrap();
    ok(&["extract-dict", "--checkpoint", "model.ckpt", "--out", "base.dict"], p);
    let m = dict_len(&p.join("base.dict"));
    assert_eq!(m, 2);

    ok(&["dict", "add", "--dict", "base.dict", "--checkpoint", "model.ckpt", "--graph", "data/aux0", "--out", "one.dict"], p);
    assert_eq!(dict_len(&p.join("one.dict")), m + 1);
    assert_eq!(dict_len(&p.join("base.dict")), m, "--out leaves the source alone");

    ok(&["dict", "add", "--dict", "base.dict", "--checkpoint", "model.ckpt", "--graph", "data/aux0", "data/aux1"], p);
    assert_eq!(dict_len(&p.join("base.dict")), m + 2, "in-place update");
    assert_eq!(std::fs::read(p.join("model.ckpt")).unwrap(), before);

    ok(&["score", "--checkpoint", "model.ckpt", "--graph", "data/test0", "--dict", "one.dict", "--out", "s.csv"], p);
}

#[test]
fn remaining_subcommands_produce_their_outputs() {
    let dir = workspace();
    let p = dir.path();
    let starter = std::fs::read_to_string(p.join("data/experiment.toml")).unwrap();
    assert!(starter.contains("train_dirs = [\"train0\", \"train1\"]"), "{starter}");

    ok(&["inject", "--graph", "data/train0", "--out", "injected", "--cliques", "1", "--contextual", "2", "--format", "fmat"], p);
    assert!(p.join("injected/features.fmat").is_file());

    ok(&["align", "--graph", "data/train0", "data/test0", "--out", "aligned", "--d", "6"], p);
    assert!(p.join("aligned/alignment.json").is_file());
    let g = owleye::graph::load_graph_dir(&p.join("aligned/test0")).unwrap();
    assert_eq!(g.features().cols(), 6);

    ok(&["diag", "--graph", "data/test0", "--out", "diag", "--stage", "raw", "--d", "6"], p);
    assert!(p.join("diag/test0_raw_distances.csv").is_file());
    assert!(!p.join("diag/test0_aligned_distances.csv").exists());

    ok(&["attn-export", "--checkpoint", "model.ckpt", "--graph", "data/test0", "--nodes", "0,5", "--out", "attn"], p);
    for f in ["node_0_attr.csv", "node_0_struc.csv", "node_5_attr.csv", "node_5_struc.csv"] {
        assert!(p.join("attn").join(f).is_file(), "{f}");
    }

    ok(&["finetune", "--checkpoint", "model.ckpt", "--graph", "data/test0", "--out", "ft.ckpt", "--epochs", "2", "--shots", "6"], p);
    let ft = owleye::training::load_checkpoint(&p.join("ft.ckpt")).unwrap();
    assert_eq!(ft.loss_history.len(), 3 + 2);

    let test = owleye::graph::load_graph_dir(&p.join("data/test0")).unwrap();
    let labels = test.labels().unwrap();
    let anomaly = labels.iter().position(|&y| y == 1).unwrap();
    let normal = labels.iter().position(|&y| y == 0).unwrap();
    std::fs::write(p.join("shots.csv"), format!("node_id,label\n{normal},0\n{anomaly},1\n")).unwrap();
    ok(&["finetune", "--checkpoint", "model.ckpt", "--graph", "data/test0", "--out", "ft2.ckpt", "--labeled", "shots.csv", "--epochs", "1"], p);
    std::fs::write(p.join("bad.csv"), "node_id,label\n0,3\n").unwrap();
    let out = owleye(&["finetune", "--checkpoint", "model.ckpt", "--graph", "data/test0", "--out", "ft3.ckpt", "--labeled", "bad.csv"], p);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_writes_the_report() {
    let dir = workspace();
    let p = dir.path();
    std::fs::write(
        p.join("exp.toml"),
        "d = 8\nn_sup = 8\nepochs = 2\ntrials = 2\n\
         train_dirs = [\"data/train0\", \"data/train1\"]\ntest_dirs = [\"data/test0\"]\n\
         aux_dirs = [\"data/aux0\"]\ncase_aux_merge = true\n",
    )
    .unwrap();
    ok(&["eval", "--config", "exp.toml", "--out-dir", "rep"], p);
    let metrics = std::fs::read_to_string(p.join("rep/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2);
    assert!(p.join("rep/summary.md").is_file());
    assert!(p.join("rep/case_aux_merge.csv").is_file());
    assert!(p.join("rep/scores/test0_seed1.csv").is_file());
}
