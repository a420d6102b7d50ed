use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use jcdd_core::gf2code::parse_alist;
use jcdd_core::harness::{parse_results_csv, read_frames, CSV_HEADER};

fn jcdd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jcdd")).args(args).output().unwrap()
}

fn core_fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name).display().to_string()
}

const SMALL: &str = r#"
seed = 3
snr_db = [2, 6]
receivers = ["jcdd-g", "decoupled-mmse"]
[frame]
n_t = 2
n_r = 4
modulation = "qpsk"
[code]
n = 24
[channel]
model = "iid"
[stop]
target_errors = 5
max_frames = 30
[solver]
max_iter = 30
"#;

fn config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("sim.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn simulate_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    let out = jcdd(&["simulate", "--config", cfg.to_str().unwrap(), "--sequential"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    let rows = parse_results_csv(&text).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.frames <= 30 && r.frames > 0));
}

#[test]
fn simulate_overrides_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    let dest = dir.path().join("r.json");
    let out = jcdd(&[
        "simulate", "--config", cfg.to_str().unwrap(), "--receiver", "jcdd-g", "--snr", "-2",
        "--max-frames", "7", "--format", "json", "--out", dest.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dest).unwrap()).unwrap();
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 1);
    assert_eq!(results[0]["snr_db"], -2.0);
    assert!(results[0]["frames"].as_u64().unwrap() <= 7);
}

#[test]
fn sequential_and_parallel_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    let a = jcdd(&["simulate", "--config", cfg.to_str().unwrap(), "--sequential"]);
    let b = jcdd(&["simulate", "--config", cfg.to_str().unwrap()]);
    let strip = |o: &Output| parse_results_csv(&String::from_utf8_lossy(&o.stdout)).unwrap().into_iter().map(|r| (r.receiver, r.frames, r.block_errors)).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = config(dir.path(), &SMALL.replace("[stop]", "[stop]\ntypo = 1"));
    assert_eq!(jcdd(&["simulate", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(jcdd(&["simulate", "--config", "/no/such/file.toml"]).status.code(), Some(2));
    let good = config(dir.path(), SMALL);
    assert_eq!(jcdd(&["simulate", "--config", good.to_str().unwrap(), "--receiver", "nope"]).status.code(), Some(2));
    assert_eq!(jcdd(&["simulate", "--config", good.to_str().unwrap(), "--format", "xml"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    let out = jcdd(&["simulate", "--config", cfg.to_str().unwrap(), "--max-frames", "1", "--out", "/no/such/dir/r.csv"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn validate_table_accepts_trainer_output() {
    for name in ["trained_g.json", "trained_s.json"] {
        let out = jcdd(&["validate-table", "--params", &core_fixture(name)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let text = std::fs::read_to_string(core_fixture("trained_g.json")).unwrap().replace("\"mu\": 0.45", "\"mu\": -0.45");
    std::fs::write(&bad, text).unwrap();
    let out = jcdd(&["validate-table", "--params", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mu"));
}

#[test]
fn simulate_uses_a_trained_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    let out = jcdd(&["simulate", "--config", cfg.to_str().unwrap(), "--receiver", "jcddnet-g", "--params", &core_fixture("trained_g.json")]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    // Tables are routed by their network field, so a sparse table is
    // accepted here and simply not used.
    let out = jcdd(&["simulate", "--config", cfg.to_str().unwrap(), "--receiver", "jcddnet-g", "--params", &core_fixture("trained_s.json")]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn codegen_prints_a_valid_alist() {
    let out = jcdd(&["codegen", "--n", "48", "--seed", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let h = parse_alist(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!((h.n(), h.m()), (48, 24));
    assert!((0..h.m()).all(|j| h.row_degree(j) == 6));
    assert_eq!(jcdd(&["codegen", "--n", "47"]).status.code(), Some(2));
}

#[test]
fn export_frames_writes_one_record_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    let out = jcdd(&["export-frames", "--config", cfg.to_str().unwrap(), "--snr", "4", "--max-frames", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let recs = read_frames(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(recs.len(), 5);
    assert!(recs.iter().all(|r| r.snr_db == 4.0 && r.b.len() == 24 && r.y_re.len() == 4));
}
