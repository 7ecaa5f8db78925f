// A run driven by a TOML config, as the `kelab` binary does it.

use kelab::runner::{run, ExperimentKind, RunConfig, RunManifest};

pub fn run_example() -> RunManifest {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "k = 5.0\np = 3\nnodes = 2048\ndivisor = [{{ point = \"infinity\", coefficient = 0.25 }}]\nout = {:?}\n",
        dir.path().join("ricci")
    );
    let config = RunConfig::from_toml_str(&text).unwrap();
    let manifest = run(&config, ExperimentKind::Ricci).unwrap();
    for v in &manifest.verdicts {
        println!("{} {}", if v.passed { "PASS" } else { "FAIL" }, v.check);
    }
    manifest
}

#[allow(dead_code)]
fn main() {
    run_example();
}
