use std::path::PathBuf;
use std::process::{Command, Output};

use cvverify::planner::PlanReport;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cvverify"));
    c.env_remove("CVVERIFY_THREADS");
    c
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cvverify-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write(name: &str, text: &str) -> String {
    let p = scratch(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn plan_round_trips() {
    let out = run(&["plan", "--k", "1", "--m", "1", "--epsilon", "0.1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["schema"], 1);
    let r: PlanReport = serde_json::from_str(&text).unwrap();
    assert_eq!(r.plan.k, 1);
    assert!(r.soundness_total <= 0.3);
}

#[test]
fn plan_rejects_partial_desk_sizes() {
    let out = run(&["plan", "--k", "1", "--m", "1", "--epsilon", "0.1", "--d0", "10"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn wrong_prover_is_rejected() {
    let cfg = write(
        "wrong.json",
        r#"{"target":{"vacuum":{}},"plan":{"m":1,"epsilon":0.2,"d0":50,"n":400,"l":300},
            "prover":{"iid_wrong":{"sigma":{"coherent":{"re":2.0,"im":0.0}}}},"trials":3,"seed":5}"#,
    );
    let out = run(&["verify-state", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["accept_rate"], 0.0);
}

#[test]
fn honest_run_writes_a_transcript() {
    let cfg = write("honest.json", r#"{"target":{"vacuum":{}},"plan":{"m":1,"epsilon":0.2,"d0":50,"n":2000,"l":1600},"seed":9}"#);
    let tr = scratch("honest.jsonl");
    let out = run(&["verify-state", "--config", &cfg, "--transcript", tr.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&tr).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // 1000 dimension-test rounds plus 1599 fidelity-test rounds.
    assert_eq!(lines.len(), 2599);
    for l in lines {
        let _: serde_json::Value = serde_json::from_str(l).unwrap();
    }
}

#[test]
fn config_errors_exit_2() {
    let cfg = write("unknown.json", r#"{"target":{"vacuum":{}},"plan":{"m":1,"epsilon":0.2},"bogus":1}"#);
    let out = run(&["verify-state", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field"));

    // State target handed to the channel command.
    let cfg = write("kind.json", r#"{"target":{"vacuum":{}},"plan":{"m":1,"epsilon":0.2,"d0":50,"n":40,"l":30}}"#);
    assert_eq!(run(&["verify-channel", "--config", &cfg]).status.code(), Some(2));
    assert_eq!(run(&["verify-state", "--config", "/nonexistent/cfg.json"]).status.code(), Some(2));
}

#[test]
fn empty_sweep_gives_header_only() {
    let cfg = write("sweep.json", r#"{"k":[],"m":[1],"epsilon":[0.1]}"#);
    let csv = scratch("sweep.csv");
    let out = run(&["sweep", "--config", &cfg, "--csv", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("k,m,epsilon"));
}

#[test]
fn selftest_passes() {
    let out = run(&["selftest"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}
