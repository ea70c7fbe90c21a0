//! Random three-table stores and reduced selects over them, plus a
//! brute-force membership oracle that never touches the store engine.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use bolaz_core::runtime::{Evaluator, UserContext};
use bolaz_core::schema::{load_schema, ResourceIdKind, Schema};
use bolaz_core::sql::{
    merge_subset, merge_union, parse_sql, reduce_select, CompareOp, Condition, ReducedSelect,
    Scalar, ValueSource,
};
use bolaz_core::store::{InMemoryStore, ResourceStore, Row, WriteOp};
use rand::seq::SliceRandom;
use rand::Rng;

pub const USERS: [i64; 3] = [1, 2, 3];

pub fn schema() -> Schema {
    load_schema(
        r#"{"tables":[
        {"name":"t0","columns":["id","owner","cat"],"primary_key":"id",
         "column_types":{"id":"integer","owner":"integer","cat":"integer"}},
        {"name":"t1","columns":["id","t0_id","cat"],"primary_key":"id",
         "foreign_keys":[{"column":"t0_id","ref_table":"t0","ref_column":"id"}],
         "column_types":{"id":"integer","t0_id":"integer","cat":"integer"}},
        {"name":"t2","columns":["id","t1_id","cat"],"primary_key":"id",
         "foreign_keys":[{"column":"t1_id","ref_table":"t1","ref_column":"id"}],
         "column_types":{"id":"integer","t1_id":"integer","cat":"integer"}}]}"#,
    )
    .unwrap()
}

/// Rows per table, at most 100 in total.
pub type Tables = BTreeMap<String, Vec<Row>>;

fn row(pairs: &[(&str, i64)]) -> Row {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), Scalar::Int(*v)))
        .collect()
}

pub fn random_tables(rng: &mut impl Rng) -> Tables {
    let n0 = rng.gen_range(1..=20);
    let n1 = rng.gen_range(0..=40);
    let n2 = rng.gen_range(0..=40);
    let mut t = Tables::new();
    t.insert(
        "t0".into(),
        (1..=n0)
            .map(|id| {
                row(&[
                    ("id", id),
                    ("owner", rng.gen_range(1..=3)),
                    ("cat", rng.gen_range(0..3)),
                ])
            })
            .collect(),
    );
    t.insert(
        "t1".into(),
        (1..=n1)
            .map(|id| {
                row(&[
                    ("id", 100 + id),
                    ("t0_id", rng.gen_range(1..=n0)),
                    ("cat", rng.gen_range(0..3)),
                ])
            })
            .collect(),
    );
    let t2 = if n1 == 0 {
        Vec::new()
    } else {
        (1..=n2)
            .map(|id| {
                row(&[
                    ("id", 200 + id),
                    ("t1_id", 100 + rng.gen_range(1..=n1)),
                    ("cat", rng.gen_range(0..3)),
                ])
            })
            .collect()
    };
    t.insert("t2".into(), t2);
    t
}

pub fn load_store(schema: &Schema, tables: &Tables) -> InMemoryStore {
    let store = InMemoryStore::new(schema.clone());
    for name in ["t0", "t1", "t2"] {
        for r in &tables[name] {
            store
                .apply(&WriteOp::Insert {
                    table: name.into(),
                    values: r.clone(),
                })
                .unwrap();
        }
    }
    store
}

const JOINS: [(&str, &str, &str); 2] = [
    ("t1", "t0", "t1.t0_id = t0.id"),
    ("t2", "t1", "t2.t1_id = t1.id"),
];

/// Table sets for a main table: it plus FK-chain neighbours.
fn table_sets(main: &str) -> Vec<Vec<&'static str>> {
    match main {
        "t0" => vec![vec!["t0"], vec!["t0", "t1"], vec!["t0", "t1", "t2"]],
        "t1" => vec![
            vec!["t1"],
            vec!["t1", "t0"],
            vec!["t1", "t2"],
            vec!["t1", "t0", "t2"],
        ],
        _ => vec![vec!["t2"], vec!["t2", "t1"], vec!["t2", "t1", "t0"]],
    }
}

fn random_condition(rng: &mut impl Rng, tables: &[&str]) -> String {
    let t = tables.choose(rng).unwrap();
    if *t == "t0" && rng.gen_bool(0.3) {
        return "t0.owner = :uid".into();
    }
    let c = rng.gen_range(0..3);
    match rng.gen_range(0..5) {
        0 | 1 => format!("{t}.cat = {c}"),
        2 => format!("{t}.cat IN ({c}, {})", (c + 1) % 3),
        3 => format!("{t}.cat < {}", c + 1),
        _ => format!("{t}.cat <> {c}"),
    }
}

/// A reduced select producing `main`'s primary key.
pub fn random_reduced(rng: &mut impl Rng, schema: &Schema, main: &str) -> ReducedSelect {
    let sets = table_sets(main);
    let tables = if rng.gen_bool(0.5) {
        sets[0].clone()
    } else {
        sets.choose(rng).unwrap().clone()
    };
    let mut text = format!("SELECT {main}.id FROM {main}");
    for (i, t) in tables.iter().enumerate().skip(1) {
        let before = &tables[..i];
        let on = JOINS
            .iter()
            .find(|(a, b, _)| (a == t && before.contains(b)) || (b == t && before.contains(a)))
            .map(|(_, _, on)| *on)
            .unwrap();
        text.push_str(&format!(" JOIN {t} ON {on}"));
    }
    let n = rng.gen_range(0..=3);
    let conds: BTreeSet<String> = (0..n).map(|_| random_condition(rng, &tables)).collect();
    if !conds.is_empty() {
        text.push_str(" WHERE ");
        text.push_str(&conds.into_iter().collect::<Vec<_>>().join(" AND "));
    }
    let binds = BTreeMap::from([(
        "uid".to_string(),
        ValueSource::TokenDerived {
            claim: "uid".into(),
        },
    )]);
    let stmt = parse_sql("q", &text, schema, &binds).unwrap_or_else(|e| panic!("{text}: {e}"));
    reduce_select(stmt.as_select().unwrap(), schema).unwrap()
}

pub fn kind_of(r: &ReducedSelect) -> ResourceIdKind {
    r.resource_ids[0].clone()
}

fn holds(c: &Condition, value: Option<&Scalar>, uid: i64) -> bool {
    let Some(v) = value else { return false };
    let wanted: Vec<Scalar> = match &c.value {
        ValueSource::Constant(lit) => lit.values(),
        ValueSource::TokenDerived { .. } => vec![Scalar::Int(uid)],
        other => panic!("unexpected condition source {other:?}"),
    };
    let first = &wanted[0];
    match c.op {
        CompareOp::Eq | CompareOp::In => wanted.contains(v),
        CompareOp::Ne => v != first,
        CompareOp::Lt => v < first,
        CompareOp::Le => v <= first,
        CompareOp::Gt => v > first,
        CompareOp::Ge => v >= first,
        CompareOp::Like => panic!("LIKE is not generated"),
    }
}

/// Projected values of `r` for user `uid`, by enumerating every row
/// combination of its tables.
pub fn oracle(r: &ReducedSelect, tables: &Tables, uid: i64) -> BTreeSet<Scalar> {
    let names = &r.base.tables;
    let kind = kind_of(r);
    let (kt, kc) = (kind.table.clone(), kind.column.clone());
    let mut out = BTreeSet::new();
    let mut chosen: HashMap<&str, &Row> = HashMap::new();
    fn walk<'a>(
        i: usize,
        names: &'a [String],
        tables: &'a Tables,
        r: &ReducedSelect,
        chosen: &mut HashMap<&'a str, &'a Row>,
        emit: &mut dyn FnMut(&HashMap<&'a str, &'a Row>),
    ) {
        if i == names.len() {
            emit(chosen);
            return;
        }
        for row in &tables[&names[i]] {
            chosen.insert(&names[i], row);
            let joins_ok = r.base.join_conditions.iter().all(|j| {
                match (
                    chosen.get(j.left.table.as_str()),
                    chosen.get(j.right.table.as_str()),
                ) {
                    (Some(a), Some(b)) => {
                        a.get(&j.left.column).is_some()
                            && a.get(&j.left.column) == b.get(&j.right.column)
                    }
                    _ => true,
                }
            });
            if joins_ok {
                walk(i + 1, names, tables, r, chosen, emit);
            }
            chosen.remove(names[i].as_str());
        }
    }
    walk(0, names, tables, r, &mut chosen, &mut |rows| {
        let admitted = r.disjuncts().any(|d| {
            d.iter()
                .all(|c| holds(c, rows[c.column.table.as_str()].get(&c.column.column), uid))
        });
        if admitted {
            if let Some(v) = rows[kt.as_str()].get(&kc) {
                out.insert(v.clone());
            }
        }
    });
    out
}

/// Values of `r` for user `uid` as the runtime evaluator computes them.
pub fn evaluated(r: &ReducedSelect, store: &dyn ResourceStore, uid: i64) -> BTreeSet<Scalar> {
    let user = UserContext::new(format!("u{uid}")).with_claim("uid", uid);
    let refs = HashMap::new();
    Evaluator::new(&refs, &user, store)
        .select(r, &kind_of(r), None)
        .unwrap()
}

pub struct PairOutcome {
    pub fired: bool,
    pub violations: Vec<String>,
}

/// Tries both merge rules on one random pair and checks the merged
/// membership against the union of the originals for every user.
pub fn check_random_pair(rng: &mut impl Rng, schema: &Schema) -> PairOutcome {
    let tables = random_tables(rng);
    let store = load_store(schema, &tables);
    let main = *["t0", "t1", "t2"].choose(rng).unwrap();
    let mut si = random_reduced(rng, schema, main);
    if rng.gen_bool(0.2) {
        let extra = random_reduced(rng, schema, main);
        if let Ok(Some(m)) = merge_union(&si, &extra, &kind_of(&si)) {
            si = m;
        }
    }
    let sj = random_reduced(rng, schema, main);
    let kind = kind_of(&si);
    let mut merged = Vec::new();
    if let Ok(Some(m)) = merge_subset(&si, &sj, &kind) {
        merged.push(("subset", m));
    } else if let Ok(Some(m)) = merge_subset(&sj, &si, &kind) {
        merged.push(("subset", m));
    } else if let Ok(Some(m)) = merge_union(&si, &sj, &kind) {
        merged.push(("union", m));
    }
    let mut violations = Vec::new();
    for (rule, m) in &merged {
        for uid in USERS {
            let want: BTreeSet<Scalar> = oracle(&si, &tables, uid)
                .union(&oracle(&sj, &tables, uid))
                .cloned()
                .collect();
            let got = oracle(m, &tables, uid);
            if got != want {
                violations.push(format!(
                    "{rule} rule, uid {uid}: merged {got:?} != union {want:?}"
                ));
            }
            let runtime = evaluated(m, &store, uid);
            if runtime != got {
                violations.push(format!(
                    "{rule} rule, uid {uid}: evaluator {runtime:?} != oracle {got:?}"
                ));
            }
        }
    }
    PairOutcome {
        fired: !merged.is_empty(),
        violations,
    }
}
