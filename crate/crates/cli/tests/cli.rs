use std::fs;
use std::path::Path;
use std::process::Command;

fn cflhkd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cflhkd"))
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let text = r#"
rounds = 6
local_epochs = 1

[data.partition]
num_clients = 16
samples_min = 30
samples_max = 60
"#;
    let path = dir.join("small.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn default_config_parses_back() {
    let out = cflhkd().arg("default-config").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = cflhkd_core::sim::SimConfig::from_toml_str(&text).unwrap();
    assert_eq!(cfg, cflhkd_core::sim::SimConfig::default());
}

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = cflhkd()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--seed", "3", "--method", "hierfavg", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics.csv", "events.jsonl", "final_models.bin", "heatmap.csv", "summary.json", "config.toml"] {
        assert!(out_dir.join(f).is_file(), "{f} missing");
    }
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["method"], "hierfavg");
    assert_eq!(summary["seed"], 3);
    assert_eq!(fs::read_to_string(out_dir.join("metrics.csv")).unwrap().lines().count(), 7);
}

#[test]
fn sweep_and_compare_tabulate_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let sweep_dir = dir.path().join("sweep");
    let out = cflhkd()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--param", "fdc.gamma", "--values", "0,1", "--seeds", "0,1", "--out"])
        .arg(&sweep_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(sweep_dir.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(sweep_dir.join("fdc.gamma=1").join("seed1").join("metrics.csv").is_file());

    let cmp_dir = dir.path().join("cmp");
    let out = cflhkd()
        .args(["compare", "--configs"])
        .arg(&cfg)
        .arg(&cfg)
        .args(["--out"])
        .arg(&cmp_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let rows: Vec<String> = fs::read_to_string(cmp_dir.join("compare.csv")).unwrap().lines().map(String::from).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1], rows[2]);
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "rounds = 5\nunknown_key = 1\n").unwrap();
    let out = cflhkd().args(["run", "--config"]).arg(&bad).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_key"));

    let cfg = small_config(dir.path());
    let out = cflhkd().args(["sweep", "--config"]).arg(&cfg).args(["--param", "fdc.nope", "--values", "1"]).output().unwrap();
    assert!(!out.status.success());
}
