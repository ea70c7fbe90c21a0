use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/golden")
        .join(name)
}

fn bolaz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bolaz"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn analyze(dir: &TempDir, app: &Path, tag: &str) -> (Output, PathBuf, PathBuf) {
    let policy = dir.path().join(format!("{tag}.policy.json"));
    let report = dir.path().join(format!("{tag}.report.json"));
    let out = bolaz(&[
        "analyze",
        "--app",
        s(app),
        "--policy-out",
        s(&policy),
        "--report-out",
        s(&report),
    ]);
    (out, policy, report)
}

#[test]
fn analyze_blog_matches_golden_policy() {
    let dir = TempDir::new().unwrap();
    let (out, policy, report) = analyze(&dir, &fixture("blog.json"), "blog");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read_to_string(&policy).unwrap(),
        std::fs::read_to_string(golden("blog_policy.json")).unwrap()
    );
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["restricted_points"], 1);
    assert_eq!(summary["producers"], 1);
    let r = read_json(&report);
    assert_eq!(r["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(r["inputs"]["app"].as_str().unwrap().len(), 64);
    assert_eq!(r["classifications"].as_array().unwrap().len(), 2);
}

#[test]
fn analyze_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let (_, p1, r1) = analyze(&dir, &fixture("address.json"), "a");
    let (_, p2, r2) = analyze(&dir, &fixture("address.json"), "b");
    assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    assert_eq!(std::fs::read(r1).unwrap(), std::fs::read(r2).unwrap());
}

#[test]
fn analyze_with_supplied_facts() {
    let dir = TempDir::new().unwrap();
    let policy = dir.path().join("p.json");
    let report = dir.path().join("r.json");
    let out = bolaz(&[
        "analyze",
        "--app",
        s(&fixture("blog.json")),
        "--facts",
        s(&golden("blog_facts.jsonl")),
        "--policy-out",
        s(&policy),
        "--report-out",
        s(&report),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        std::fs::read_to_string(&policy).unwrap(),
        std::fs::read_to_string(golden("blog_policy.json")).unwrap()
    );
    assert!(read_json(&report)["inputs"]["facts"].is_string());

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"fact\":\"param_to_sql\",\"endpoint\":\"ghost\",\"param\":\"x\",\"stmt\":\"s\",\"position\":{\"where_condition\":\"blog.id\"}}\n").unwrap();
    let out = bolaz(&[
        "analyze",
        "--app",
        s(&fixture("blog.json")),
        "--facts",
        s(&bad),
        "--policy-out",
        s(&policy),
        "--report-out",
        s(&report),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn empty_app_gives_empty_policy() {
    let dir = TempDir::new().unwrap();
    let app = dir.path().join("empty.json");
    std::fs::write(
        &app,
        r#"{"format": "bolaz-app/1", "schema": {"tables": []}, "endpoints": []}"#,
    )
    .unwrap();
    let (out, policy, _) = analyze(&dir, &app, "empty");
    assert_eq!(code(&out), 0);
    let p = read_json(&policy);
    assert!(p["sets"].as_array().unwrap().is_empty());
    assert!(p["unassociated_points"].as_array().unwrap().is_empty());
}

#[test]
fn unassociated_point_is_reported() {
    let dir = TempDir::new().unwrap();
    let mut doc = read_json(&fixture("blog.json"));
    doc["pages"] = Value::Array(vec![]);
    let app = dir.path().join("nopages.json");
    std::fs::write(&app, doc.to_string()).unwrap();
    let (out, policy, _) = analyze(&dir, &app, "nopages");
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("deleteBlog"));
    let p = read_json(&policy);
    assert_eq!(p["unassociated_points"].as_array().unwrap().len(), 1);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["unassociated_points"], 1);
}

#[test]
fn malformed_app_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let app = dir.path().join("bad.json");
    std::fs::write(&app, "{\"format\": ").unwrap();
    let (out, _, _) = analyze(&dir, &app, "bad");
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));
    let out = bolaz(&[
        "analyze",
        "--app",
        "/nonexistent/app.json",
        "--policy-out",
        "p",
        "--report-out",
        "r",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn scan_reports_one_finding_per_vulnerable_fixture() {
    let dir = TempDir::new().unwrap();
    for (name, mode) in [
        ("uasbf_batchdelete", "UASBF"),
        ("bopla_shares", "BOPLA"),
        ("bfla_changeuser", "BFLA"),
    ] {
        let out_path = dir.path().join(format!("{name}.findings.json"));
        let out = bolaz(&[
            "scan",
            "--app",
            s(&fixture(&format!("{name}.json"))),
            "--findings-out",
            s(&out_path),
            "--seed",
            "3",
        ]);
        assert_eq!(code(&out), 1, "{name}");
        let f = read_json(&out_path);
        let findings = f["findings"].as_array().unwrap();
        assert_eq!(findings.len(), 1, "{name}");
        assert_eq!(findings[0]["mode"], mode);
        assert_eq!(f["seed"], 3);

        let out = bolaz(&[
            "scan",
            "--app",
            s(&fixture(&format!("{name}_patched.json"))),
        ]);
        assert_eq!(code(&out), 0, "{name}_patched");
        let f: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert!(f["findings"].as_array().unwrap().is_empty());
    }
}

#[test]
fn scan_with_policy_file() {
    let dir = TempDir::new().unwrap();
    let (_, policy, _) = analyze(&dir, &fixture("order.json"), "order");
    let out = bolaz(&[
        "scan",
        "--app",
        s(&fixture("order.json")),
        "--policy",
        s(&policy),
    ]);
    assert_eq!(code(&out), 1);
    let f: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(f["inputs"]["policy"].is_string());
    let again = bolaz(&[
        "scan",
        "--app",
        s(&fixture("order.json")),
        "--policy",
        s(&policy),
    ]);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn scan_needs_two_users() {
    let dir = TempDir::new().unwrap();
    let mut doc: Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("order.json")).unwrap()).unwrap();
    doc["fixture"]["users"].as_array_mut().unwrap().truncate(1);
    let app = dir.path().join("one.json");
    std::fs::write(&app, doc.to_string()).unwrap();
    let out = bolaz(&["scan", "--app", s(&app)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient seed"));
}

fn enforce(dir: &TempDir, scenario: &str) -> Output {
    let (_, policy, _) = analyze(dir, &fixture("order.json"), "order");
    let sc = dir.path().join("scenario.json");
    std::fs::write(&sc, scenario).unwrap();
    bolaz(&[
        "enforce",
        "--app",
        s(&fixture("order.json")),
        "--policy",
        s(&policy),
        "--scenario",
        s(&sc),
    ])
}

#[test]
fn enforce_denies_foreign_order_and_hits_cache() {
    let dir = TempDir::new().unwrap();
    let out = enforce(
        &dir,
        r#"{"seed": 4, "steps": [
            {"session": "userA", "call": "getOrder", "args": {"orderNo": 845}},
            {"session": "userB", "call": "listOrders"},
            {"session": "userB", "call": "getOrder", "args": {"orderNo": 845}}]}"#,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    let decisions: Vec<(String, String)> = r["replay"]["steps"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|s| s["decisions"].as_array().unwrap().clone())
        .map(|d| {
            (
                d["verdict"].as_str().unwrap().to_string(),
                d["basis"].as_str().unwrap().to_string(),
            )
        })
        .collect();
    assert_eq!(
        decisions,
        vec![
            ("Deny".into(), "NoMatch".into()),
            ("Allow".into(), "CacheHit".into())
        ]
    );
    assert_eq!(r["replay"]["seed"], 4);
}

#[test]
fn enforce_empty_and_dangling_scenarios() {
    let dir = TempDir::new().unwrap();
    let out = enforce(&dir, r#"{"seed": 0, "steps": []}"#);
    assert_eq!(code(&out), 0);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(r["replay"]["steps"].as_array().unwrap().is_empty());

    let out = enforce(
        &dir,
        r#"{"steps": [{"session": "userA", "call": "dropTables"}]}"#,
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("dangling reference"));
}

#[test]
fn enforce_rejects_policy_for_another_app() {
    let dir = TempDir::new().unwrap();
    let (_, policy, _) = analyze(&dir, &fixture("blog.json"), "blog");
    let sc = dir.path().join("sc.json");
    std::fs::write(&sc, r#"{"steps": []}"#).unwrap();
    let out = bolaz(&[
        "enforce",
        "--app",
        s(&fixture("order.json")),
        "--policy",
        s(&policy),
        "--scenario",
        s(&sc),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn enforce_argument_errors() {
    let out = bolaz(&["enforce", "--app", "a.json", "--policy", "p.json"]);
    assert_eq!(code(&out), 2);
    let out = bolaz(&[
        "enforce",
        "--app",
        "a.json",
        "--policy",
        "p.json",
        "--scenario",
        "s.json",
        "--ttl",
        "0",
    ]);
    assert_eq!(code(&out), 2);
}
