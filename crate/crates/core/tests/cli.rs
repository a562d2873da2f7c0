//! End-to-end runs of the `conml` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"{
    "learner": {"kind": "maml", "hidden": [12]},
    "tasks": {"family": {"kind": "sinusoid"}, "shots": 5, "val_size": 10},
    "contrastive": {"lambda": 0.1, "k": 1},
    "training": {"batch_size": 4, "episodes": 30},
    "eval": {"tasks": 20, "test_points": 20,
             "cluster": {"tasks": 3, "subsets": 3, "subset_size": 5},
             "distances": {"tasks": 6, "subsets": 2, "subset_size": 5}},
    "seed": 4
}"#;

fn conml(args: &[&str], runs_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_conml"));
    cmd.args(args).env_remove("CONML_RUNS_DIR");
    if let Some(root) = runs_env {
        cmd.env("CONML_RUNS_DIR", root);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stdout_path(out: &Output) -> PathBuf {
    PathBuf::from(String::from_utf8_lossy(&out.stdout).lines().last().unwrap().trim())
}

#[test]
fn train_writes_run_tree_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let root = dir.path().join("runs");
    let a = conml(&["train", "--config", &cfg], Some(&root));
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let run = stdout_path(&a);
    assert_eq!(run.parent().unwrap(), root);
    for f in ["manifest.json", "checkpoint.bin", "losses.csv", "config.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let first = std::fs::read(run.join("manifest.json")).unwrap();
    let other = dir.path().join("other");
    let b = conml(&["train", "--config", &cfg, "--out", other.to_str().unwrap()], None);
    assert!(b.status.success());
    let run_b = stdout_path(&b);
    assert_eq!(run.file_name(), run_b.file_name());
    assert_eq!(first, std::fs::read(run_b.join("manifest.json")).unwrap());
    assert_eq!(std::fs::read(run.join("checkpoint.bin")).unwrap(), std::fs::read(run_b.join("checkpoint.bin")).unwrap());

    // A different seed is a different run.
    let c = conml(&["train", "--config", &cfg, "--seed", "5", "--out", other.to_str().unwrap()], None);
    assert_ne!(stdout_path(&c).file_name(), run.file_name());
}

#[test]
fn eval_protocols_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let root = dir.path().join("runs");
    let run = stdout_path(&conml(&["train", "--config", &cfg, "--out", root.to_str().unwrap()], None));
    let run_s = run.to_str().unwrap();

    let out = conml(&["eval", run_s, "--protocol", "cluster"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(run.join("reports/cluster.csv")).unwrap();
    assert!(csv.starts_with("silhouette,dbi,chi\n"));

    let out = conml(&["eval", run_s, "--protocol", "ood", "--deltas", "0,1,2,3"], None);
    assert!(out.status.success());
    let ood = std::fs::read_to_string(run.join("reports/ood.csv")).unwrap();
    assert_eq!(ood.lines().count(), 5);

    let out = conml(&["eval", run_s, "--protocol", "shots", "--shots", "5,10,20"], None);
    assert!(out.status.success());
    assert!(run.join("reports/shots.svg").is_file());

    // The run can also be located through its config.
    let out = conml(&["eval", "--config", &cfg, "--out", root.to_str().unwrap(), "--protocol", "mse,distances"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("reports/mse.csv").is_file());
    assert!(run.join("reports/distances_d_out.svg").is_file());
}

#[test]
fn eval_without_checkpoint_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = conml(&["eval", dir.path().to_str().unwrap()], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no checkpoint"));
}

#[test]
fn invalid_config_reports_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", &SMALL.replace("\"k\": 1", "\"kk\": 1"));
    let out = conml(&["train", "--config", &cfg, "--out", dir.path().to_str().unwrap()], None);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("contrastive") && err.contains("kk"), "{err}");
}

#[test]
fn divergence_exits_with_collapse_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL
        .replace("\"lambda\": 0.1", "\"lambda\": 1.0")
        .replace("\"episodes\": 30}", "\"episodes\": 30, \"optimizer\": {\"kind\": \"sgd\", \"lr\": 50.0}}");
    let cfg = write_config(dir.path(), "div.json", &body);
    let out = conml(&["train", "--config", &cfg, "--out", dir.path().to_str().unwrap()], None);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("collapse"));
}

#[test]
fn ablate_tables() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL.replace("\"episodes\": 30", "\"episodes\": 5");
    let cfg = write_config(dir.path(), "c.json", &body);
    let root = dir.path().to_str().unwrap();
    let out = conml(&["ablate", "--config", &cfg, "--out", root, "--lambda", "0,0.01,0.03,0.1,0.3,1"], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    assert_eq!(table.lines().filter(|l| l.starts_with("| ")).count(), 1 + 6);

    let out = conml(&["ablate", "--config", &cfg, "--out", root, "--k", "1,2,4"], None);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("peak MiB") && table.lines().filter(|l| l.starts_with("| ")).count() == 4);

    let out = conml(&["ablate", "--config", &cfg, "--out", root, "--lambda", "0.1"], None);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().filter(|l| l.starts_with("| ")).count(), 2);

    let out = conml(&["ablate", "--config", &cfg, "--out", root, "--lambda", ""], None);
    assert!(!out.status.success());
    let out = conml(&["ablate", "--config", &cfg, "--out", root, "--loss-form", "bogus"], None);
    assert!(!out.status.success());
}

#[test]
fn gradcheck_passes_and_negative_control_fails() {
    let out = conml(&["gradcheck"], None);
    assert!(out.status.success());
    let report = String::from_utf8_lossy(&out.stdout);
    assert!(report.contains("maml second-order"));
    assert!(report.contains("contrastive infonce / euclidean"));
    assert!(!conml(&["gradcheck", "--corrupt"], None).status.success());
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            conml::cli::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{e}"));
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
