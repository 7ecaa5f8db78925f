use std::fs;
use std::process::Command;

fn kelab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kelab"))
}

fn numeric_payload(path: &std::path::Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn solve_is_deterministic_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let status = kelab()
            .args(["solve", "--nodes", "2049", "--perturbations", "10", "--seed", "3", "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    for f in ["solution.csv", "report.json", "variational.json"] {
        assert_eq!(numeric_payload(&a.join(f)), numeric_payload(&b.join(f)), "{f}");
    }
    let leftovers: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with('.'))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "k = 5.0\nnodes = 1025\nperturbations = 0\n").unwrap();
    let out = dir.path().join("out");
    let status = kelab()
        .args(["solve", "--k", "6", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["k"], 6.0);
    assert_eq!(manifest["config"]["nodes"], 1025);
    assert_eq!(manifest["convention_hash"], kelab::convention_hash());
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = kelab().args(["solve", "--nodes", "2", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nodes"));
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "k = 4.0\nunknown_key = 1\n").unwrap();
    let out = kelab().args(["ricci", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failing_verdict_gives_nonzero_exit_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fam");
    let status = kelab()
        .args(["family", "--lambda", "-0.5", "--base-nodes", "5", "--nodes", "257", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["passed"], false);
    assert_eq!(manifest["verdicts"][0]["check"], "twist_precheck");
}

#[test]
fn ricci_run_emits_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let status = kelab()
        .args(["ricci", "--p", "3", "--nodes", "1025", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let plot = fs::read_to_string(dir.path().join("plot/contraction.csv")).unwrap();
    assert!(plot.starts_with("m,gap,ratio,bound"));
}
