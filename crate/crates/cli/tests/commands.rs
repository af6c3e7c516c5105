use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
synthetic.classes=10
synthetic.samples=12
split.train=5
split.val=0
split.test=5
queries=3
h_gen=4
hidden=16
feature_dim=8
latent_dim=8
unit_epochs=2
gamma=0,1
epochs=3
aux_steps=3
meta_episodes=3
batch_size=8
episodes=4
";

fn dtn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtn")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = dtn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.cfg");
    fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn metric_kinds(dir: &Path) -> Vec<String> {
    fs::read_to_string(dir.join("metrics.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().to_string())
        .collect()
}

#[test]
fn default_schedule_writes_thirty_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    ok(&["train", "--set", "aux_steps=2", "--set", "meta_episodes=2", "--episodes", "5", "--out", s(&out)]);
    let kinds = metric_kinds(&out);
    assert_eq!(kinds.len(), 30);
    assert_eq!(kinds.iter().filter(|k| *k == "M").count(), 6);
    assert_eq!(fs::read_to_string(out.join("schedule.txt")).unwrap().trim(), "AAAAAAAAAAAAAAMAAAAMAAAMMAAAMM");
    assert!(out.join("checkpoint.dtnc").is_file());
}

#[test]
fn naive_three_epochs_are_all_meta() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("run");
    ok(&["train", "--config", &cfg, "--schedule", "naive", "--epochs", "3", "--out", s(&out)]);
    assert_eq!(metric_kinds(&out), ["M", "M", "M"]);
}

#[test]
fn missing_dataset_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("absent.txt");
    let out = dtn(&["train", "--data", s(&missing), "--out", s(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(dtn(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(dtn(&["train", "--set", "n_way"]).status.code(), Some(1));
    assert_eq!(dtn(&["ablate", "--sweep", "widths"]).status.code(), Some(1));
}

#[test]
fn eval_reports_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let run = tmp.path().join("run");
    ok(&["train", "--config", &cfg, "--out", s(&run)]);
    let ckpt = run.join("checkpoint.dtnc");

    let single = ok(&["eval", "--checkpoint", s(&ckpt), "--episodes", "1", "--out", s(&tmp.path().join("e1"))]);
    assert!(single.trim().ends_with("± n/a"), "{single}");

    let ev = tmp.path().join("ev");
    let a = ok(&["eval", "--checkpoint", s(&ckpt), "--seed", "3", "--out", s(&ev)]);
    let b = ok(&["eval", "--checkpoint", s(&ckpt), "--seed", "3", "--out", s(&ev)]);
    assert_eq!(a, b);
    assert!(!a.contains("n/a"));
    let csv = fs::read_to_string(ev.join("eval_episodes.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        ok(&["train", "--config", &cfg, "--seed", "7", "--schedule", "at", "--out", s(out)]);
    }
    for f in ["metrics.csv", "checkpoint.dtnc", "schedule.txt", "config.txt", "report.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn resumed_run_matches_uninterrupted() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (full, part) = (tmp.path().join("full"), tmp.path().join("part"));
    ok(&["train", "--config", &cfg, "--out", s(&full)]);
    let stopped = ok(&["train", "--config", &cfg, "--out", s(&part), "--stop-before", "2"]);
    assert!(stopped.contains("stopped before epoch 2"));
    assert_eq!(metric_kinds(&part).len(), 2);
    ok(&["train", "--resume", s(&part.join("checkpoint.dtnc")), "--out", s(&part)]);
    for f in ["metrics.csv", "checkpoint.dtnc", "report.txt"] {
        assert_eq!(fs::read(full.join(f)).unwrap(), fs::read(part.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("run");
    ok(&["train", "--config", &cfg, "--set", "n_way=3", "--set", "n_way=4", "--epochs", "1", "--schedule", "naive", "--out", s(&out)]);
    let text = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(text.lines().any(|l| l == "n_way=4"));
    ok(&["train", "--config", &cfg, "--set", "n_way=4", "--n-way", "3", "--epochs", "1", "--schedule", "naive", "--out", s(&out)]);
    let text = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(text.lines().any(|l| l == "n_way=3"));
    assert!(text.lines().any(|l| l == "synthetic.classes=10"));
}

fn export_roles(ckpt: &Path, dir: &Path, h: &str) -> Vec<String> {
    let file = dir.join(format!("emb{h}.csv"));
    ok(&["export-embeddings", "--checkpoint", s(ckpt), "--n-way", "3", "--k-shot", "1", "--h-gen", h, "--out", s(&file)]);
    let text = fs::read_to_string(&file).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("role,class,f0"));
    lines.map(|l| l.split(',').next().unwrap().to_string()).collect()
}

#[test]
fn export_counts_generated_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let run = tmp.path().join("run");
    ok(&["train", "--config", &cfg, "--out", s(&run)]);
    let ckpt = run.join("checkpoint.dtnc");

    let roles = export_roles(&ckpt, tmp.path(), "64");
    let count = |r: &str| roles.iter().filter(|x| *x == r).count();
    assert_eq!(count("generated"), 192);
    assert_eq!(count("support"), 3);
    assert_eq!(count("real"), 3 * 12);
    assert!(roles.iter().all(|r| ["real", "support", "generated"].contains(&r.as_str())));

    let roles = export_roles(&ckpt, tmp.path(), "0");
    assert_eq!(roles.iter().filter(|x| *x == "generated").count(), 0);
}

#[test]
fn strategy_sweep_over_five_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("ablate");
    ok(&["ablate", "--config", &cfg, "--sweep", "strategy", "--seeds", "1-5", "--out", s(&out)]);
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().next(), Some("arm,seed,accuracy,ci95"));
    assert_eq!(results.lines().count(), 21);
    let arms: Vec<String> = fs::read_to_string(out.join("arms.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(arms, ["naive", "two-stage", "at", "oat"]);
}

#[test]
fn generation_sweep_includes_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("ablate");
    ok(&["ablate", "--config", &cfg, "--sweep", "h", "--seeds", "1", "--out", s(&out)]);
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    let arms: Vec<&str> = results.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(arms, ["h=0", "h=2", "h=4", "h=16", "h=32", "h=64"]);
}

#[test]
fn generated_data_round_trips_through_training() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let data = tmp.path().join("data/syn.txt");
    ok(&["gen-data", "--config", &cfg, "--out", s(&data)]);
    let header = fs::read_to_string(&data).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "dtn-embed v1 dim=16");

    // Same items from the file or generated in memory give the same run.
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["train", "--config", &cfg, "--out", s(&a)]);
    ok(&["train", "--config", &cfg, "--data", s(&data), "--out", s(&b)]);
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
}

#[test]
fn keys_lists_every_setting() {
    let out = ok(&["keys"]);
    assert!(out.lines().any(|l| l.starts_with("h_gen=64")));
    assert!(out.lines().any(|l| l.starts_with("schedule=oat")));
}
