mod common;

use std::collections::BTreeMap;

use bolaz_core::app::load_app;
use bolaz_core::harness::{
    enforce_and_replay, fixture_users, interpret, random_scenario, scan, stress_replay,
    HarnessError, Scenario, ThreatMode,
};
use bolaz_core::runtime::{Basis, UserContext, Verdict};
use bolaz_core::sql::{Literal, Scalar};
use bolaz_core::store::ResourceStore;

use common::{enforcer, fixture_text, model, policy, store};

fn args(pairs: &[(&str, i64)]) -> BTreeMap<String, Literal> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), Literal::Scalar(Scalar::Int(*v))))
        .collect()
}

#[test]
fn list_returns_own_orders() {
    let m = model("order.json");
    let s = store(&m);
    let a = fixture_users(&m).remove(0);
    let resp = interpret(&m, "listOrders", &a, &BTreeMap::new(), &s).unwrap();
    let mut ids = resp.fields["orderNo"].clone();
    ids.sort();
    assert_eq!(ids, vec![Scalar::Int(512), Scalar::Int(733)]);
    assert!(resp.exposes(&Scalar::Int(733)));
    assert!(!resp.exposes(&Scalar::Int(845)));
}

#[test]
fn unprotected_handler_serves_foreign_order() {
    let m = model("order.json");
    let s = store(&m);
    let a = fixture_users(&m).remove(0);
    let resp = interpret(&m, "getOrder", &a, &args(&[("orderNo", 845)]), &s).unwrap();
    assert_eq!(resp.fields["amount"], vec![Scalar::Int(75)]);
    assert_eq!(resp.outcome("s2").unwrap().rows, 1);
}

#[test]
fn missing_argument_and_token() {
    let m = model("order.json");
    let s = store(&m);
    let a = fixture_users(&m).remove(0);
    let err = interpret(&m, "getOrder", &a, &BTreeMap::new(), &s).unwrap_err();
    assert_eq!(
        err,
        HarnessError::MissingArg {
            endpoint: "getOrder".into(),
            param: "orderNo".into()
        }
    );
    let err = interpret(
        &m,
        "listOrders",
        &UserContext::new("anon"),
        &BTreeMap::new(),
        &s,
    )
    .unwrap_err();
    assert!(matches!(err, HarnessError::Unauthenticated(_)));
    let err = interpret(&m, "nope", &a, &BTreeMap::new(), &s).unwrap_err();
    assert!(matches!(err, HarnessError::UnknownEndpoint(_)));
}

#[test]
fn single_user_fixture_cannot_seed_a_scan() {
    let mut doc: serde_json::Value = serde_json::from_str(&fixture_text("order.json")).unwrap();
    doc["fixture"]["users"].as_array_mut().unwrap().truncate(1);
    let m = load_app(&doc.to_string()).unwrap();
    let err = scan(&m, &policy(&m), &store(&m), 0).unwrap_err();
    assert!(matches!(err, HarnessError::InsufficientSeed(_)));
}

#[test]
fn scan_is_deterministic_per_seed() {
    let m = model("order.json");
    let p = policy(&m);
    let s = store(&m);
    let first = serde_json::to_string(&scan(&m, &p, &s, 11).unwrap()).unwrap();
    let second = serde_json::to_string(&scan(&m, &p, &s, 11).unwrap()).unwrap();
    assert_eq!(first, second);
    let findings = scan(&m, &p, &s, 11).unwrap();
    assert_eq!(findings.len(), 1);
    assert!(findings[0].confirmed);
    assert_eq!(findings[0].point.endpoint, "getOrder");
}

#[test]
fn scan_mode_does_not_depend_on_seed() {
    for (file, mode) in [
        ("uasbf_batchdelete.json", ThreatMode::Uasbf),
        ("bopla_shares.json", ThreatMode::Bopla),
        ("bfla_changeuser.json", ThreatMode::Bfla),
    ] {
        let m = model(file);
        let (p, s) = (policy(&m), store(&m));
        for seed in 0..16 {
            let findings = scan(&m, &p, &s, seed).unwrap();
            assert_eq!(findings.len(), 1, "{file} seed {seed}");
            assert_eq!(findings[0].mode, mode, "{file} seed {seed}");
        }
    }
}

#[test]
fn scan_leaves_the_store_untouched() {
    let m = model("uasbf_batchdelete.json");
    let s = store(&m);
    let before: Vec<_> = m
        .schema()
        .tables()
        .iter()
        .map(|t| s.enumerate(&t.name).unwrap())
        .collect();
    scan(&m, &policy(&m), &s, 3).unwrap();
    let after: Vec<_> = m
        .schema()
        .tables()
        .iter()
        .map(|t| s.enumerate(&t.name).unwrap())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn order_scenario_denies_then_hits_cache() {
    let m = model("order.json");
    let s = store(&m);
    let e = enforcer(&m);
    let scenario = Scenario::from_json(
        r#"{"seed": 0, "steps": [
            {"session": "userA", "call": "getOrder", "args": {"orderNo": 845}},
            {"session": "userB", "call": "listOrders"},
            {"session": "userB", "call": "getOrder", "args": {"orderNo": 845}}
        ]}"#,
    )
    .unwrap();
    let report = enforce_and_replay(&m, &e, &s, &scenario).unwrap();
    let got: Vec<_> = report
        .steps
        .iter()
        .flat_map(|st| st.decisions.iter().map(|d| (d.verdict, d.basis)))
        .collect();
    assert_eq!(
        got,
        vec![
            (Verdict::Deny, Basis::NoMatch),
            (Verdict::Allow, Basis::CacheHit)
        ]
    );
    assert_eq!(report.blocked, 1);
    assert_eq!(report.executed, 2);
    assert_eq!(report.steps[1].cached, 2);
    assert!(report.steps[0].response.is_none());
}

#[test]
fn empty_scenario_gives_empty_report() {
    let m = model("order.json");
    let report = enforce_and_replay(&m, &enforcer(&m), &store(&m), &Scenario::default()).unwrap();
    assert!(report.steps.is_empty());
    assert_eq!(
        (report.allowed, report.denied, report.authz_store_reads),
        (0, 0, 0)
    );
}

#[test]
fn dangling_references_are_rejected() {
    let m = model("order.json");
    let e = enforcer(&m);
    let s = store(&m);
    for text in [
        r#"{"steps": [{"session": "userA", "call": "deleteEverything"}]}"#,
        r#"{"steps": [{"session": "mallory", "call": "listOrders"}]}"#,
    ] {
        let sc = Scenario::from_json(text).unwrap();
        let err = enforce_and_replay(&m, &e, &s, &sc).unwrap_err();
        assert!(matches!(err, HarnessError::DanglingReference(_)), "{err}");
    }
    assert!(matches!(
        Scenario::from_json("[1,"),
        Err(HarnessError::Scenario(_))
    ));
}

#[test]
fn scenario_round_trips() {
    let m = model("address.json");
    let sc = random_scenario(&m, &enforcer(&m), &store(&m), 5, 20).unwrap();
    assert_eq!(sc.steps.len(), 20);
    assert_eq!(Scenario::from_json(&sc.to_json()).unwrap(), sc);
}

#[test]
fn stress_matches_serial_on_blog() {
    let m = model("blog.json");
    let sc = random_scenario(&m, &enforcer(&m), &store(&m), 9, 60).unwrap();
    let serial = enforce_and_replay(&m, &enforcer(&m), &store(&m), &sc).unwrap();
    let stress = stress_replay(&m, &enforcer(&m), &store(&m), &sc).unwrap();
    let mut a: Vec<_> = serial.verdicts().into_iter().map(|(_, v)| v).collect();
    let mut b: Vec<_> = stress.verdicts().into_iter().map(|(_, v)| v).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
}
