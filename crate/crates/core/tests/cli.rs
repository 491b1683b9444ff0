//! End-to-end runs of the `ctbn` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctbn::cli::parse_model;
use ctbn::fixtures::{chain_network, two_variable_network};
use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn ctbn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctbn")).args(args).output().expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn probs(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn data_files_match_fixtures() {
    let two = std::fs::read_to_string(data("two_variable.json")).unwrap();
    assert_eq!(parse_model(&two).unwrap(), two_variable_network());
    let chain = std::fs::read_to_string(data("chain.json")).unwrap();
    assert_eq!(parse_model(&chain).unwrap(), chain_network());
}

#[test]
fn validate_accepts_and_lists_violations() {
    let out = ctbn(&["validate", path(&data("chain.json"))]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json_of(&out)["joint_states"], 16);

    let dir = tempfile::tempdir().unwrap();
    let bad = std::fs::read_to_string(data("two_variable.json"))
        .unwrap()
        .replace("[[-1, 1], [2, -2]]", "[[-1, 2], [2, -2]]")
        .replace("-8, 5]", "-8, -5]");
    let p = write(&dir, "bad.json", &bad);
    let out = ctbn(&["validate", path(&p)]);
    assert_eq!(out.status.code(), Some(1));
    let issues = json_of(&out)["issues"].as_array().unwrap().len();
    assert!(issues >= 2, "{}", String::from_utf8_lossy(&out.stdout));

    let out = ctbn(&["--format", "text", "validate", path(&p)]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("invalid:"));
}

#[test]
fn exact_query_at_start_gives_initial_marginals() {
    let out = ctbn(&["exact", "query", path(&data("chain.json")), path(&data("chain_evidence.json")), path(&data("marginal_a.json"))]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    assert_eq!(probs(&v["probes"][0]["probs"]), vec![0.5, 0.5]);
    let end = probs(&v["probes"][2]["probs"]);
    assert!((end[0] - 0.738).abs() < 1e-3, "{end:?}");
}

#[test]
fn ep_query_reports_marginal_and_convergence() {
    let out = ctbn(&["ep", "query", path(&data("chain.json")), path(&data("chain_evidence.json")), path(&data("marginal_a.json"))]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    let end = probs(&v["probes"][2]["probs"]);
    assert!((end[0] - 0.703).abs() < 0.005, "{end:?}");
    assert_eq!(v["converged"], true);
    assert!(v["segments"][0]["sweeps"].as_u64().unwrap() >= 2);

    let text = ctbn(&[
        "--format",
        "text",
        "ep",
        "query",
        path(&data("chain.json")),
        path(&data("chain_evidence.json")),
        path(&data("marginal_a.json")),
    ]);
    let s = String::from_utf8(text.stdout).unwrap();
    assert!(s.starts_with("t    A=a1"), "{s}");
    assert!(s.contains("residual"));
}

#[test]
fn ep_non_convergence_still_reports() {
    let out = ctbn(&[
        "ep",
        "query",
        path(&data("chain.json")),
        path(&data("chain_evidence.json")),
        path(&data("marginal_a.json")),
        "--max-iters",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(json_of(&out)["converged"], false);
}

#[test]
fn ep_stats_cover_every_cluster() {
    let out = ctbn(&["ep", "stats", path(&data("chain.json")), path(&data("chain_evidence.json")), "--segment", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    let clusters = v["clusters"].as_array().unwrap();
    assert_eq!(clusters.len(), 3);
    for c in clusters {
        let total: f64 = probs(&c["expected_time"]).iter().sum();
        assert!((total - 1.0).abs() < 1e-5, "{total}");
    }
    let out = ctbn(&["ep", "stats", path(&data("chain.json")), path(&data("chain_evidence.json")), "--segment", "5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evidence_likelihood_is_exact_only() {
    let dir = tempfile::tempdir().unwrap();
    let q = write(&dir, "q.json", r#"{"kind": "evidence-likelihood"}"#);
    let (m, e) = (data("chain.json"), data("chain_evidence.json"));
    let args = [path(&m), path(&e), path(&q)];
    let out = ctbn(&["exact", "query", args[0], args[1], args[2]]);
    assert_eq!(out.status.code(), Some(0));
    let ll = json_of(&out)["log_likelihood"].as_f64().unwrap();
    assert!(ll < 0.0 && ll.is_finite());
    let out = ctbn(&["ep", "query", args[0], args[1], args[2]]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exact engine"));
}

#[test]
fn impossible_evidence_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let ev = write(
        &dir,
        "ev.json",
        r#"{"horizon": [0, 1], "points": [{"var": "D", "value": "d2", "t": 0}]}"#,
    );
    let q = data("marginal_a.json");
    for engine in ["exact", "ep"] {
        let out = ctbn(&[engine, "query", path(&data("chain.json")), path(&ev), path(&q)]);
        assert_eq!(out.status.code(), Some(2), "{engine}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn size_cap_exit_code() {
    let names: Vec<String> = (0..13).map(|i| format!("X{i}")).collect();
    let vars: Vec<String> = names.iter().map(|n| format!(r#"{{"name": "{n}", "states": ["0", "1"]}}"#)).collect();
    let cims: Vec<String> = names.iter().map(|n| format!(r#""{n}": {{"": [[-1, 1], [1, -1]]}}"#)).collect();
    let model = format!(r#"{{"variables": [{}], "cims": {{{}}}}}"#, vars.join(","), cims.join(","));
    let dir = tempfile::tempdir().unwrap();
    let m = write(&dir, "big.json", &model);
    let ev = write(&dir, "ev.json", r#"{"horizon": [0, 1]}"#);
    let out = ctbn(&["compare", path(&m), path(&ev), "--points", "3"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn compare_reports_per_point_kl() {
    let out = ctbn(&["compare", path(&data("chain.json")), path(&data("chain_evidence.json")), "--points", "60"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_of(&out);
    assert_eq!(v["points"].as_array().unwrap().len(), 60);
    let avg = v["average_kl"].as_f64().unwrap();
    assert!(avg > 0.0 && avg < 0.01, "{avg}");

    let out = ctbn(&[
        "compare",
        path(&data("chain.json")),
        path(&data("chain_evidence.json")),
        "--points",
        "60",
        "--topology",
        path(&data("single_cluster.json")),
    ]);
    let avg = json_of(&out)["average_kl"].as_f64().unwrap();
    assert!(avg.abs() < 1e-9, "{avg}");
}

#[test]
fn outputs_are_byte_identical() {
    let (m, e, two) = (data("chain.json"), data("chain_evidence.json"), data("two_variable.json"));
    let args = ["compare", path(&m), path(&e), "--points", "7"];
    assert_eq!(ctbn(&args).stdout, ctbn(&args).stdout);
    let sample = ["sample", path(&two), "--n", "3", "--t-end", "1", "--seed", "9"];
    let a = ctbn(&sample);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, ctbn(&sample).stdout);
    let dump = json_of(&a);
    assert_eq!(dump["seed"], 9);
    assert_eq!(dump["trajectories"].as_array().unwrap().len(), 3);
    let other = ctbn(&["sample", path(&two), "--n", "3", "--t-end", "1", "--seed", "10"]);
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn malformed_inputs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let broken = write(&dir, "m.json", "{not json");
    assert_eq!(ctbn(&["validate", path(&broken)]).status.code(), Some(1));
    assert_eq!(ctbn(&["validate", path(&dir.path().join("missing.json"))]).status.code(), Some(1));
    let q = write(&dir, "q.json", r#"{"kind": "marginal", "times": [5]}"#);
    let out = ctbn(&["exact", "query", path(&data("chain.json")), path(&data("chain_evidence.json")), path(&q)]);
    assert_eq!(out.status.code(), Some(1));
}
