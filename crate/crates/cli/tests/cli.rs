use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use splitwiper::pipelines::{BlobsSource, DataSource, ExperimentConfig, LabelMode};

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, name: &str, edit: impl FnOnce(&mut ExperimentConfig)) -> PathBuf {
        let mut cfg = ExperimentConfig::reference();
        cfg.client_epochs = 2;
        cfg.server_epochs = 4;
        cfg.data = DataSource::Blobs(BlobsSource { class_count: 4, dims: 8, samples_per_class: 50, spread: 1.0 });
        edit(&mut cfg);
        let path = self.path(name);
        fs::write(&path, cfg.canonical_json()).unwrap();
        path
    }

    fn train(&self, config: &Path, out: &str) -> Output {
        run(&["train", "--config", s(config), "--out", s(&self.path(out))])
    }

    fn unlearn(&self, config: &Path, world: &str, strategy: &str, client: &str, select: &str, out: &str) -> Output {
        run(&[
            "unlearn",
            "--config",
            s(config),
            "--world",
            s(&self.path(world)),
            "--strategy",
            strategy,
            "--client",
            client,
            "--select",
            select,
            "--oracle",
            "--out",
            s(&self.path(out)),
        ])
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitwiper")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_id(dir: &Path) -> String {
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("run.json")).unwrap()).unwrap();
    v["run_id"].as_str().unwrap().to_string()
}

#[test]
fn train_writes_a_bundle_with_a_stable_run_id() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.json", |_| {});
    let a = sb.train(&cfg, "a");
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&sb.train(&cfg, "b")), 0);
    for f in [
        "config.json",
        "ledger.json",
        "messages.jsonl",
        "metrics.csv",
        "eval.csv",
        "report.json",
        "checkpoints/server.swpr",
    ] {
        assert!(sb.path("a").join(f).exists(), "{f}");
    }
    assert_eq!(run_id(&sb.path("a")), run_id(&sb.path("b")));
    let header = fs::read_to_string(sb.path("a/metrics.csv")).unwrap();
    assert!(header.starts_with("run_id,strategy,phase,party,compute_units,bytes_sent,bytes_received,epochs\n"));
    let eval = fs::read_to_string(sb.path("a/eval.csv")).unwrap();
    assert!(eval.starts_with("run_id,client,split,accuracy\n"));
}

#[test]
fn seed_override_changes_the_run() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.json", |_| {});
    assert_eq!(code(&sb.train(&cfg, "a")), 0);
    let o = run(&["train", "--config", s(&cfg), "--out", s(&sb.path("b")), "--seed-override", "9"]);
    assert_eq!(code(&o), 0);
    assert_ne!(run_id(&sb.path("a")), run_id(&sb.path("b")));
}

#[test]
fn m_not_above_n_is_a_contract_error() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.json", |c| c.server_epochs = c.client_epochs);
    let o = sb.train(&cfg, "a");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("M > N"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_names_the_field() {
    let sb = Sandbox::new();
    let path = sb.path("bad.json");
    let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::reference().canonical_json()).unwrap();
    v["learning_rate"] = 0.5.into();
    fs::write(&path, v.to_string()).unwrap();
    let o = sb.train(&path, "a");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn cold_reinit_strategy1_passes_exact_equivalence() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.json", |_| {});
    assert_eq!(code(&sb.train(&cfg, "w")), 0);
    let o = sb.unlearn(&cfg, "w", "1", "0", "class:2", "u");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(sb.path("u/report.json")).unwrap()).unwrap();
    let g3 = report["eval"]["goals"]["checks"].as_array().unwrap().iter().find(|g| g["goal"] == "G3").unwrap().clone();
    assert_eq!(g3["status"], "pass");
    assert_eq!(report["eval"]["oracle"]["parameter_distance"], 0.0);
}

#[test]
fn empty_selection_reproduces_the_input_world() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.json", |_| {});
    assert_eq!(code(&sb.train(&cfg, "w")), 0);
    assert_eq!(code(&sb.unlearn(&cfg, "w", "1", "2", "none", "u")), 0);
    for entry in fs::read_dir(sb.path("w/checkpoints")).unwrap() {
        let name = entry.unwrap().file_name();
        let a = fs::read(sb.path("w/checkpoints").join(&name)).unwrap();
        let b = fs::read(sb.path("u/checkpoints").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?}");
    }
}

#[test]
fn contract_violations_exit_two() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.json", |_| {});
    assert_eq!(code(&sb.train(&cfg, "w")), 0);
    assert_eq!(code(&sb.unlearn(&cfg, "w", "2", "0", "class:1", "u")), 2);
    assert_eq!(code(&sb.unlearn(&cfg, "w", "1", "7", "none", "u")), 2);
    assert_eq!(code(&sb.unlearn(&cfg, "w", "0", "7", "none", "u")), 2);
    assert_eq!(code(&sb.unlearn(&cfg, "w", "1", "0", "class:99", "u")), 2);
}

#[test]
fn non_label_sharing_unlearning_runs_all_strategies() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.json", |c| c.label_mode = LabelMode::NonLabelSharing);
    assert_eq!(code(&sb.train(&cfg, "w")), 0);
    for strategy in ["0", "1", "2"] {
        let out = format!("u{strategy}");
        let o = sb.unlearn(&cfg, "w", strategy, "1", "class:2", &out);
        assert_eq!(code(&o), 0, "strategy {strategy}: {}", stderr(&o));
        let log = fs::read_to_string(sb.path(&out).join("messages.jsonl")).unwrap();
        assert!(!log.contains("\"labels\":\"raw\""));
    }
    let v = run(&["verify", s(&sb.path("w")), s(&sb.path("u1")), s(&sb.path("u2"))]);
    assert_eq!(code(&v), 0, "{}", stdout(&v));
}

#[test]
fn verify_pairs_strategy1_runs_over_m() {
    let sb = Sandbox::new();
    let train = sb.config("t.json", |_| {});
    assert_eq!(code(&sb.train(&train, "w")), 0);
    let m8 = sb.config("m8.json", |c| c.server_epochs = 8);
    assert_eq!(code(&sb.unlearn(&train, "w", "1", "1", "class:0", "a")), 0);
    assert_eq!(code(&sb.unlearn(&m8, "w", "1", "1", "class:0", "b")), 0);
    let o = run(&["verify", s(&sb.path("a")), s(&sb.path("b"))]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let line = stdout(&o).lines().find(|l| l.contains("independent of M")).unwrap().to_string();
    assert!(line.starts_with("PASS"), "{line}");
}

#[test]
fn verify_rejects_runs_differing_in_two_factors() {
    let sb = Sandbox::new();
    let train = sb.config("t.json", |_| {});
    assert_eq!(code(&sb.train(&train, "w")), 0);
    let other = sb.config("o.json", |c| c.server_epochs = 8);
    assert_eq!(code(&sb.unlearn(&train, "w", "0", "1", "class:0", "a")), 0);
    assert_eq!(code(&sb.unlearn(&other, "w", "0", "1", "none", "b")), 0);
    assert_eq!(code(&run(&["verify", s(&sb.path("a")), s(&sb.path("b"))])), 2);
}

#[test]
fn tampered_ledger_fails_verification() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.json", |_| {});
    assert_eq!(code(&sb.train(&cfg, "w")), 0);
    let ledger = sb.path("w/ledger.json");
    let text = fs::read_to_string(&ledger).unwrap().replacen("\"bytes\": ", "\"bytes\": 1", 1);
    fs::write(&ledger, text).unwrap();
    let o = run(&["verify", s(&sb.path("w"))]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
    assert_eq!(code(&sb.unlearn(&cfg, "w", "1", "0", "none", "u")), 3);
}

#[test]
fn gradcheck_bundle_verifies_and_prints_its_error() {
    let sb = Sandbox::new();
    let o = run(&["gradcheck", "--out", s(&sb.path("g"))]);
    assert_eq!(code(&o), 0);
    let v = run(&["verify", s(&sb.path("g"))]);
    assert_eq!(code(&v), 0);
    assert!(stdout(&v).contains("max relative error"), "{}", stdout(&v));
}

#[test]
fn gradcheck_is_repeatable_and_catches_corruption() {
    let a = run(&["gradcheck", "--seed", "11"]);
    let b = run(&["gradcheck", "--seed", "11"]);
    assert_eq!(code(&a), 0);
    assert_eq!(stdout(&a), stdout(&b));
    let bad = run(&["gradcheck", "--seed", "11", "--corrupt-layer", "0"]);
    assert_eq!(code(&bad), 3);
    assert!(stderr(&bad).contains("failed"));
}

#[test]
fn threads_flag_and_env_agree_with_sequential() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.json", |_| {});
    assert_eq!(code(&sb.train(&cfg, "a")), 0);
    let o = run(&["--threads", "3", "train", "--config", s(&cfg), "--out", s(&sb.path("b"))]);
    assert_eq!(code(&o), 0);
    let env = Command::new(env!("CARGO_BIN_EXE_splitwiper"))
        .args(["train", "--config", s(&cfg), "--out", s(&sb.path("c"))])
        .env("SPLITWIPER_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&env), 0);
    for other in ["b", "c"] {
        for f in ["checkpoints/server.swpr", "ledger.json", "metrics.csv", "eval.csv"] {
            assert_eq!(fs::read(sb.path("a").join(f)).unwrap(), fs::read(sb.path(other).join(f)).unwrap(), "{f}");
        }
    }
}
