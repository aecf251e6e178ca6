use std::path::Path;
use std::process::{Command, Output};

use tomo_core::cli::io::{export_log, import_log, parse_log, read_tree, write_log};
use tomo_core::{generate_topology, simulate_session, AccuracyReport, SimulatorConfig};

fn tomo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tomo")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn small_network() -> SimulatorConfig {
    SimulatorConfig {
        n_hosts: 16,
        n_routers: 6,
        n_pairs: 400,
        seed: 5,
        ..SimulatorConfig::default()
    }
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SCENARIO: &str = r#"{"seeds":[5,6],"network":{"n_hosts":16,"n_routers":6,"n_pairs":400},"recovery":{"rho":0.4}}"#;

#[test]
fn log_export_import_round_trip() {
    let cfg = small_network();
    let net = generate_topology(&cfg).unwrap();
    let log = simulate_session(&net, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.ndjson");
    export_log(&log, &path).unwrap();
    assert_eq!(import_log(&path).unwrap(), log);

    let mut buf = Vec::new();
    write_log(&log, &mut buf).unwrap();
    assert_eq!(parse_log(buf.as_slice()).unwrap(), log);
}

#[test]
fn pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = write(d, "scenario.json", SCENARIO);
    let log = d.join("log.ndjson");
    let truth = d.join("truth.json");
    let cov = d.join("cov.json");
    let tree = d.join("tree.json");
    let score = d.join("score.json");
    let s = |p: &Path| p.to_str().unwrap().to_string();

    let o = tomo(&["simulate", "--config", &config, "--seed", "5", "--out", &s(&log), "--truth", &s(&truth)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = tomo(&["estimate", "--log", &s(&log), "--out", &s(&cov)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let t = read_tree(&truth).unwrap();
    let source = t.root().to_string();
    let o = tomo(&["recover", "--cov", &s(&cov), "--source", &source, "--rho", "0.4", "--out", &s(&tree)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let recovered = read_tree(&tree).unwrap();
    assert_eq!(recovered.leaves(), t.leaves());

    let o = tomo(&["score", "--tree", &s(&tree), "--truth", &s(&truth), "--out", &s(&score)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: AccuracyReport = serde_json::from_str(&std::fs::read_to_string(&score).unwrap()).unwrap();
    assert!(r.p > 0.5 && r.p <= 1.0);

    // drop one peer, then let it rejoin
    let peer = recovered.leaves().iter().next().unwrap().to_string();
    let smaller = d.join("smaller.json");
    let regrown = d.join("regrown.json");
    let o = tomo(&["leave", "--tree", &s(&tree), "--peer", &peer, "--out", &s(&smaller)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!read_tree(&smaller).unwrap().contains(&peer.as_str().into()));
    let o = tomo(&["join", "--tree", &s(&smaller), "--log", &s(&log), "--peer", &peer, "--rho", "0.4", "--out", &s(&regrown)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_tree(&regrown).unwrap().leaves(), t.leaves());
}

#[test]
fn e2e_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "scenario.json", SCENARIO);
    let a = tomo(&["e2e", "--config", &config]);
    let b = tomo(&["e2e", "--config", &config]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["runs"].as_array().unwrap().len(), 2);
    assert!(v["summary"]["mean_p"].is_f64());
    // defaulted fields are written out
    assert_eq!(v["config"]["network"]["client_fraction"], 0.7);
    assert!(v["runs"][0]["tree"]["children"].is_array());
}

#[test]
fn sweep_has_one_point_per_rate() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "sweep.json",
        r#"{"seeds":[1],"network":{"n_hosts":12,"n_routers":5,"n_pairs":200},"recovery":{"rho":0.4},"sweep":{"bg_rate":[1e6,4e6]}}"#,
    );
    let o = tomo(&["sweep", "--config", &config]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["points"].as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing_seeds = write(d, "bad.json", r#"{"network":{}}"#);
    let o = tomo(&["e2e", "--config", &missing_seeds]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeds"));

    let bad_field = write(d, "bad2.json", r#"{"seeds":[1],"network":{"n_routers":0}}"#);
    let o = tomo(&["e2e", "--config", &bad_field]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("network.n_routers"));

    let bad_join = write(
        d,
        "bad3.json",
        r#"{"seeds":[1],"network":{"n_hosts":12,"n_routers":4,"n_pairs":100},"dynamic":{"initial_hosts":6,"schedule":[["h999"]]}}"#,
    );
    assert_eq!(code(&tomo(&["e2e", "--config", &bad_join])), 2);

    let acausal = write(
        d,
        "log.ndjson",
        "{\"type\":\"send\",\"k\":0,\"ts_us\":100}\n{\"type\":\"recv\",\"receiver\":\"a\",\"k\":0,\"ts_us\":50}\n",
    );
    let o = tomo(&["estimate", "--log", &acausal]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    assert_eq!(code(&tomo(&["recover", "--source", "s"])), 2);
}
