//! CLI acceptance test: with a fixed master seed the benchmark must produce
//! byte-identical reports across runs.

use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
families = ["mlp", "lstm"]
strategies = ["recursive", "mimo"]
include_arima = true
include_single_networks = false
include_lee_carter = false
horizon = 4
lag = 2
validation_len = 4
hpo_trials = 0
hpo_seeds = 1
master_seed = 42

[[datasets]]
kind = "synthetic-series"
name = "series-a"
length = 60

[[datasets]]
kind = "synthetic-surface"
name = "surface-a"
years = 40
age = 65
sex = "total"
"#;

fn run_benchmark(out_dir: &Path, config_path: &Path) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_mortcast"))
        .args(["--out", out_dir.to_str().unwrap(), "benchmark"])
        .arg(config_path)
        .status()
        .expect("benchmark run");
    assert!(status.success(), "benchmark exited with {status}");
    std::fs::read(out_dir.join("report.csv")).expect("report.csv written")
}

#[test]
fn criterion_12_benchmark_is_deterministic() {
    let root = std::env::temp_dir().join(format!("mortcast-accept-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let config_path = root.join("bench.toml");
    std::fs::write(&config_path, CONFIG).unwrap();

    let first = run_benchmark(&root.join("run1"), &config_path);
    let second = run_benchmark(&root.join("run2"), &config_path);
    let identical = !first.is_empty() && first == second;

    let _ = std::fs::remove_dir_all(&root);
    println!(
        "criterion 12 (benchmark determinism): {}",
        if identical { "pass" } else { "FAIL" }
    );
    assert!(identical, "criterion 12 (benchmark determinism) failed");
}
