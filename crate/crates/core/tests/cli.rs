use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stratsel"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) {
    fs::write(dir.join(name), body).unwrap();
}

const SMALL: &str = r#"{"dataset": {"synthetic": {"population": 1000, "beta": "type1"}},
    "k": 4, "theta": 3, "n": 100, "replications": 100, "out_dir": "out"}"#;

#[test]
fn generate_smoke_writes_small_files() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", r#"{"dataset": {"synthetic": {"population": 10, "beta": "type2"}}}"#);
    let out = run(dir.path(), &["generate", "--config", "c.json", "--out-dir", "g"]);
    assert_eq!(out.status.code(), Some(0));
    for name in ["train.csv", "test.csv"] {
        let text = fs::read_to_string(dir.path().join("g").join(name)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 11);
        assert_eq!(lines[0].split(',').count(), 21);
        assert!(lines[0].ends_with(",Y"));
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("g/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "generate");
    assert!(manifest["seeds"]["train"].is_u64());
}

#[test]
fn validation_failures_exit_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        r#"{"dataset": {"synthetic": {"population": 10}}, "out_dir": "x"}"#,
        r#"{"dataset": {"synthetic": {"population": 10, "beta": "type1"}}, "colour": 1, "out_dir": "x"}"#,
        r#"{"dataset": {"synthetic": {"population": 100, "beta": "type1"}}, "theta": 21, "n": 10, "out_dir": "x"}"#,
        r#"{"dataset": {"synthetic": {"population": 100, "beta": "type1"}}, "replications": 1, "n": 10, "out_dir": "x"}"#,
    ];
    for (i, body) in cases.iter().enumerate() {
        let name = format!("c{i}.json");
        write_config(dir.path(), &name, body);
        let cmd = if i == 0 { "generate" } else { "select" };
        let out = run(dir.path(), &[cmd, "--config", &name]);
        assert_eq!(out.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!dir.path().join("x").exists(), "case {i} left output behind");
    }
    write_config(dir.path(), "ok.json", SMALL);
    let out = run(dir.path(), &["evaluate", "--config", "ok.json", "--methods", "SRS,bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["select", "--config", "absent.json"]);
    assert_eq!(out.status.code(), Some(1));
    write_config(
        dir.path(),
        "c.json",
        r#"{"dataset": {"csv": {"train": "no.csv", "test": "no.csv", "outcome": "y"}}, "n": 5}"#,
    );
    let out = run(dir.path(), &["select", "--config", "c.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn zero_theta_gives_empty_selection() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", SMALL);
    let out = run(dir.path(), &["select", "--config", "c.json"]);
    assert!(out.status.success());
    let sel: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/selection.json")).unwrap()).unwrap();
    assert!(!sel["trace"].as_array().unwrap().is_empty());

    let zero = SMALL.replace("\"theta\": 3", "\"theta\": 0");
    write_config(dir.path(), "z.json", &zero);
    let out = run(dir.path(), &["select", "--config", "z.json", "--out-dir", "z"]);
    assert!(out.status.success());
    let sel: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("z/selection.json")).unwrap()).unwrap();
    assert_eq!(sel["selected"], serde_json::json!([]));
}

#[test]
fn evaluate_smoke_report_has_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", SMALL);
    let out = run(dir.path(), &["evaluate", "--config", "c.json", "--methods", "SRS,SFS-KM-V"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["methods"].as_array().unwrap().len(), 2);
    assert_eq!(report["replications"], 100);
    assert!(!fs::read_to_string(dir.path().join("out/report.json")).unwrap().contains("out_dir"));
}

#[test]
fn allocate_from_generated_csv() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "c.json", SMALL);
    assert!(run(dir.path(), &["generate", "--config", "c.json", "--out-dir", "data"]).status.success());
    write_config(
        dir.path(),
        "csv.json",
        r#"{"dataset": {"csv": {"train": "data/train.csv", "test": "data/test.csv", "outcome": "Y"}},
            "k": 3, "n": 60, "allocator": "optimal", "features": ["X1", "X5"], "out_dir": "alloc"}"#,
    );
    let out = run(dir.path(), &["allocate", "--config", "csv.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let plan: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("alloc/plan.json")).unwrap()).unwrap();
    let sizes: Vec<u64> = plan["plan"]["sizes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(sizes.iter().sum::<u64>(), 60);
    assert_eq!(plan["plan"]["method"], "optimal");
    assert_eq!(plan["features"], serde_json::json!(["X1", "X5"]));
    assert!(plan["stratified_variance"].as_f64().unwrap() <= plan["srs_variance"].as_f64().unwrap());

    let mismatch = run(dir.path(), &["select", "--config", "alloc/manifest.json"]);
    assert_eq!(mismatch.status.code(), Some(2));
}
