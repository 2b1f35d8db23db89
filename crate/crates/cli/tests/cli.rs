use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chainspec"))
        .args(args)
        .current_dir(cwd)
        .env("CHAINSPEC_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn systems_list_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["systems-list"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    for name in ["identity-interval", "cascade", "rotation-golden"] {
        assert!(text.contains(name), "{text}");
    }
    let out = run(&["systems-list", "--json"], dir.path());
    let v = json(&out);
    let arr = v.as_array().unwrap();
    assert!(arr.iter().any(|s| s["name"] == "cascade" && s["self_test"] == true));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["systems-list", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    let out = run(&["analyze", "--system", "cascade", "--resolution", "0", "--pair", "1;0"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("resolution"));
    let out = run(&["spectrum", "--system", "no-such-system", "--pair", "1;0"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "system = \"halving\"\nresolution = 0.01\npairs = [\"1;0\"]\n";
    std::fs::write(dir.path().join("a.toml"), cfg).unwrap();
    let out = run(&["chains", "--config", "a.toml", "--json"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["config"]["text"], cfg);
    assert_eq!(v["schema_version"], 1);
}

#[test]
fn halving_chains_give_certified_family() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["chains", "--system", "halving", "--resolution", "0.001", "--pair", "1;0", "--json", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let p = &v["pairs"][0];
    assert_eq!(p["chain_related"], true);
    let f = &p["family"];
    assert_eq!(f["converged"], true);
    let cert = &f["certificate"];
    assert_eq!(cert["nested"], true);
    assert_eq!(cert["acyclic"], true);
    assert_eq!(cert["order_compatible"], true);
    let dump = std::fs::read_to_string(dir.path().join("o/pair0_family.txt")).unwrap();
    assert!(dump.len() > 10);
}

#[test]
fn comb_chains_name_the_isolated_points() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["chains", "--system", "comb", "--pair", "0,0;0,1", "--json"], dir.path());
    let v = json(&out);
    let p = &v["pairs"][0];
    assert_eq!(p["chain_related"], false);
    let obs = p["family"]["obstruction"].as_str().expect("obstruction reported");
    assert!(obs.contains("isolated-point obstruction"), "{obs}");
}

#[test]
fn unrelated_pair_fails_at_a_level() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["chains", "--system", "identity-two-intervals", "--pair", "0.5;2.5", "--json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let p = &v["pairs"][0];
    assert_eq!(p["chain_related"], false);
    assert!(p["first_failure"].as_u64().unwrap() >= 1);
}

#[test]
fn analyze_identity_cross_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["analyze", "--system", "identity-two-intervals", "--pair", "0.5;2.5"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("chainspec-out/report.json")).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["pairs"][0]["chain_related"], false);
    assert!(v["pairs"][0]["spectrum"]["terms"].as_array().unwrap().is_empty());
}

#[test]
fn analyze_cascade_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["analyze", "--system", "cascade", "--resolution", "0.002", "--pair", "1;0", "--out", "a"];
    let out = run(&args, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let first = std::fs::read(dir.path().join("a/report.json")).unwrap();
    let v: Value = serde_json::from_slice(&first).unwrap();
    let p = &v["pairs"][0];
    assert_eq!(p["chain_related"], true);
    let terms: Vec<&str> = p["spectrum"]["terms"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect();
    assert!(terms.iter().any(|t| t.contains('z')), "{terms:?}");
    assert_eq!(v["conley"]["total"], true);
    for f in ["conley.dot", "pair0_prolong.csv", "pair0_prolong.dot"] {
        assert!(dir.path().join("a").join(f).exists(), "{f}");
    }
    let again = run(&args, dir.path());
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(std::fs::read(dir.path().join("a/report.json")).unwrap(), first);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn conley_on_cascade_prints_a_ladder() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["conley", "--system", "cascade", "--resolution", "0.002"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("digraph"), "{text}");
    assert!(text.contains("Conley order total: true"));
    // a total order's Hasse diagram on k components has k - 1 edges
    let v = json(&run(&["conley", "--system", "cascade", "--resolution", "0.002", "--json"], dir.path()));
    let k = v["conley"]["components"].as_array().unwrap().len();
    assert_eq!(v["conley"]["hasse"].as_array().unwrap().len(), k - 1);
}

#[test]
fn cascade_prolongation_reaches_zero_at_level_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["prolong", "--system", "cascade", "--resolution", "0.001", "--pair", "1;0", "--alpha", "2", "--json", "--out", "p"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["pairs"][0]["prolongation"]["y_first_level"], 2);
    let csv = std::fs::read_to_string(dir.path().join("p/pair0_prolong.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "0,0,2"), "{}", &csv[..200]);
}

#[test]
fn rotation_spectrum_has_oracle_eta() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["spectrum", "--system", "rotation-golden", "--pair", "0.1;0.3", "--json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let entries = v["pairs"][0]["spectrum"]["entries"].as_array().unwrap();
    assert!(entries.iter().any(|e| e["term"] == "e" && e["confidence"] == "OracleGrade"), "{entries:?}");
}
