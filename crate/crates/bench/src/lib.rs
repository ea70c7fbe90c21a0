//! Workloads shared by the benches.

use std::path::Path;

use bolaz_core::runtime::{CacheConfig, Enforcer, IdCache};
use bolaz_core::sql::Scalar;
use bolaz_core::store::{InMemoryStore, ResourceStore, Row, WriteOp};
use bolaz_core::{analyze, load_app, AppModel};

pub fn fixture_text(name: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

pub fn fixture(name: &str) -> AppModel {
    load_app(&fixture_text(name)).expect("fixture loads")
}

pub fn enforcer(model: &AppModel) -> Enforcer {
    let policy = analyze(model, None).expect("fixture analyzes").policy;
    Enforcer::new(
        policy,
        model.schema().clone(),
        IdCache::new(CacheConfig::default()),
    )
}

/// The order app's schema with `users` users, each owning every
/// `users`-th of `orders` orders. User `u` has uid `u`, order `id` belongs
/// to `id % users + 1`.
pub fn orders_store(model: &AppModel, users: i64, orders: i64) -> InMemoryStore {
    let s = InMemoryStore::new(model.schema().clone());
    let insert = |table: &str, values: Row| {
        s.apply(&WriteOp::Insert {
            table: table.into(),
            values,
        })
        .expect("insert");
    };
    for u in 1..=users {
        let mut r = Row::new();
        r.insert("id".into(), Scalar::Int(u));
        r.insert("name".into(), Scalar::Str(format!("user{u}")));
        insert("user", r);
    }
    for id in 1..=orders {
        let mut r = Row::new();
        r.insert("id".into(), Scalar::Int(id));
        r.insert("user_id".into(), Scalar::Int(id % users + 1));
        r.insert("amount".into(), Scalar::Int(id % 997));
        insert("orders", r);
    }
    s
}
