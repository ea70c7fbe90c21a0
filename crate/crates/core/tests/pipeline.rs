use bolaz_core::app::load_app;
use bolaz_core::classify::{classify_all, Role};
use bolaz_core::msg::build_policy;
use bolaz_core::taint::{all_facts, facts_to_jsonl};

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

#[test]
fn blog_pipeline() {
    let model = load_app(&fixture("blog.json")).unwrap();
    let facts = all_facts(&model);
    print!("{}", facts_to_jsonl(&facts));
    assert_eq!(facts.len(), 4);
    let classes = classify_all(&model, &facts);
    assert_eq!(classes[0].role, Role::Producer);
    assert_eq!(classes[1].role, Role::Consumer);
    let policy = build_policy(&model, &facts, &classes).unwrap();
    println!("{}", policy.to_json());
    assert_eq!(policy.restricted_sets().count(), 1);
}

#[test]
fn blog_enforcement_and_scan() {
    use bolaz_core::harness::{enforce_and_replay, scan, Scenario};
    use bolaz_core::runtime::{CacheConfig, Enforcer, IdCache};
    use bolaz_core::store::InMemoryStore;

    let model = load_app(&fixture("blog.json")).unwrap();
    let facts = all_facts(&model);
    let classes = classify_all(&model, &facts);
    let policy = build_policy(&model, &facts, &classes).unwrap();
    let store =
        InMemoryStore::from_fixture(model.schema().clone(), model.fixture().unwrap()).unwrap();

    let findings = scan(&model, &policy, &store, 7).unwrap();
    println!("{}", serde_json::to_string_pretty(&findings).unwrap());
    assert_eq!(findings.iter().filter(|f| f.confirmed).count(), 1);

    let enforcer = Enforcer::new(
        policy,
        model.schema().clone(),
        IdCache::new(CacheConfig::default()),
    );
    let scenario = Scenario::from_json(
        r#"{"seed": 1, "steps": [
            {"session": "alice", "call": "getUserBlog"},
            {"session": "alice", "call": "deleteBlog", "args": {"blogId": 20}},
            {"session": "alice", "call": "deleteBlog", "args": {"blogId": 10}},
            {"session": "bob", "call": "deleteBlog", "args": {"blogId": 20}}
        ]}"#,
    )
    .unwrap();
    let report = enforce_and_replay(&model, &enforcer, &store, &scenario).unwrap();
    println!("{}", report.to_json());
    let bases: Vec<_> = report
        .steps
        .iter()
        .flat_map(|s| s.decisions.iter().map(|d| d.basis))
        .collect();
    assert_eq!(format!("{bases:?}"), "[NoMatch, CacheHit, StoreHit]");
}
