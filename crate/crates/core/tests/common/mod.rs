#![allow(dead_code)]

use bolaz_core::app::{load_app, AppModel};
use bolaz_core::classify::classify_all;
use bolaz_core::msg::{build_policy, AuthzPolicy};
use bolaz_core::runtime::{CacheConfig, Enforcer, IdCache};
use bolaz_core::store::InMemoryStore;
use bolaz_core::taint::all_facts;

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

pub fn model(name: &str) -> AppModel {
    load_app(&fixture_text(name)).unwrap()
}

pub fn policy(model: &AppModel) -> AuthzPolicy {
    let facts = all_facts(model);
    let classes = classify_all(model, &facts);
    build_policy(model, &facts, &classes).unwrap()
}

pub fn store(model: &AppModel) -> InMemoryStore {
    InMemoryStore::from_fixture(model.schema().clone(), model.fixture().unwrap()).unwrap()
}

pub fn enforcer(model: &AppModel) -> Enforcer {
    Enforcer::new(
        policy(model),
        model.schema().clone(),
        IdCache::new(CacheConfig::default()),
    )
}

pub mod gen;

pub const LISTING_SQL: &str =
    "SELECT a_id, addr FROM address WHERE user_id = :uid AND detail = :detail LIMIT :start, :stop";

/// The address search statement with its placeholders annotated, reduced.
pub fn reduced_address_search() -> String {
    use std::collections::BTreeMap;

    use bolaz_core::schema::load_schema;
    use bolaz_core::sql::{parse_sql, reduce_select, ValueSource};

    let schema = load_schema(
        r#"{"tables":[
        {"name":"user","columns":["id","name"],"primary_key":"id"},
        {"name":"address","columns":["a_id","user_id","addr","detail"],"primary_key":"a_id",
         "foreign_keys":[{"column":"user_id","ref_table":"user","ref_column":"id"}]}]}"#,
    )
    .unwrap();
    let param = |name: &str| ValueSource::Param {
        endpoint: "listAddresses".into(),
        name: name.into(),
    };
    let binds = BTreeMap::from([
        (
            "uid".to_string(),
            ValueSource::TokenDerived {
                claim: "uid".into(),
            },
        ),
        ("detail".to_string(), param("detail")),
        ("start".to_string(), param("start")),
        ("stop".to_string(), param("stop")),
    ]);
    let stmt = parse_sql("s1", LISTING_SQL, &schema, &binds).unwrap();
    let reduced = reduce_select(stmt.as_select().unwrap(), &schema).unwrap();
    serde_json::to_string_pretty(&reduced).unwrap() + "\n"
}

pub fn golden_path(name: &str) -> String {
    format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// Compares `actual` with a golden file; `BOLAZ_BLESS=1` rewrites it.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_path(name);
    if std::env::var_os("BOLAZ_BLESS").is_some() {
        std::fs::create_dir_all(std::path::Path::new(&path).parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!("{name} differs from golden:\n{actual}"))
    }
}
