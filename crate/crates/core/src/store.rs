//! Resource store interface and an in-memory reference implementation.
//!
//! Rows are keyed by primary key; every foreign-key column carries a hash
//! index. Tables are locked individually, so readers of different tables
//! never contend and writes serialize per table.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::{RwLock, RwLockReadGuard};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::Fixture;
use crate::schema::{ScalarKind, Schema, TableDef};
use crate::sql::{ColumnRef, CompareOp, JoinCondition, Scalar};

/// A stored row; an absent column is NULL.
pub type Row = BTreeMap<String, Scalar>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("store unavailable: {0}")]
    Unavailable(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("constraint violation: {0}")]
    Constraint(String),
    #[error("unsupported store operation: {0}")]
    Unsupported(String),
}

/// `column op values`. Membership operators match any listed value; the
/// ordering operators and `LIKE` compare with the first value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub column: ColumnRef,
    pub op: CompareOp,
    pub values: Vec<Scalar>,
}

impl Predicate {
    pub fn new(column: ColumnRef, op: CompareOp, values: Vec<Scalar>) -> Self {
        Predicate { column, op, values }
    }

    pub fn eq(column: ColumnRef, value: Scalar) -> Self {
        Predicate::new(column, CompareOp::Eq, vec![value])
    }

    /// Comparison is type-aware: an integer never matches a string, and
    /// NULL matches nothing.
    pub fn matches(&self, value: Option<&Scalar>) -> bool {
        let Some(v) = value else { return false };
        let first = self.values.first();
        let ordered = |f: fn(std::cmp::Ordering) -> bool| match (v, first) {
            (Scalar::Int(a), Some(Scalar::Int(b))) => f(a.cmp(b)),
            (Scalar::Str(a), Some(Scalar::Str(b))) => f(a.cmp(b)),
            _ => false,
        };
        match self.op {
            CompareOp::Eq | CompareOp::In => self.values.contains(v),
            CompareOp::Ne => !self.values.contains(v),
            CompareOp::Lt => ordered(|o| o.is_lt()),
            CompareOp::Le => ordered(|o| o.is_le()),
            CompareOp::Gt => ordered(|o| o.is_gt()),
            CompareOp::Ge => ordered(|o| o.is_ge()),
            CompareOp::Like => match (v, first) {
                (Scalar::Str(s), Some(Scalar::Str(p))) => like(s, p),
                _ => false,
            },
        }
    }
}

fn like(s: &str, pattern: &str) -> bool {
    let s: Vec<char> = s.chars().collect();
    let p: Vec<char> = pattern.chars().collect();
    // dp[j]: pattern prefix of length j matches the current text prefix
    let mut dp = vec![false; p.len() + 1];
    dp[0] = true;
    for j in 1..=p.len() {
        dp[j] = dp[j - 1] && p[j - 1] == '%';
    }
    for &c in &s {
        let mut next = vec![false; p.len() + 1];
        for j in 1..=p.len() {
            next[j] = match p[j - 1] {
                '%' => next[j - 1] || dp[j],
                '_' => dp[j - 1],
                pc => dp[j - 1] && pc == c,
            };
        }
        dp = next;
    }
    dp[p.len()]
}

/// A read over one or more inner-joined tables.
///
/// `filter` is a disjunction of conjunctions: a row combination qualifies
/// when it satisfies every predicate of at least one entry. A single empty
/// conjunction admits everything; an empty `filter` admits nothing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub tables: Vec<String>,
    pub joins: Vec<JoinCondition>,
    pub filter: Vec<Vec<Predicate>>,
    pub output: Vec<ColumnRef>,
    pub offset: Option<usize>,
    pub limit: Option<usize>,
}

impl Query {
    pub fn new(tables: Vec<String>, joins: Vec<JoinCondition>, output: Vec<ColumnRef>) -> Self {
        Query {
            tables,
            joins,
            filter: vec![Vec::new()],
            output,
            offset: None,
            limit: None,
        }
    }

    pub fn with_filter(mut self, filter: Vec<Vec<Predicate>>) -> Self {
        self.filter = filter;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WriteOp {
    Insert {
        table: String,
        values: Row,
    },
    Update {
        table: String,
        set: Row,
        filter: Vec<Predicate>,
    },
    Delete {
        table: String,
        filter: Vec<Predicate>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WriteOutcome {
    pub affected: u64,
    pub inserted_key: Option<Scalar>,
}

pub trait ResourceStore: Send + Sync {
    fn schema(&self) -> &Schema;
    fn enumerate(&self, table: &str) -> Result<Vec<Row>, StoreError>;
    /// Output tuples in a deterministic order; NULL columns are `None`.
    fn select(&self, query: &Query) -> Result<Vec<Vec<Option<Scalar>>>, StoreError>;
    fn apply(&self, op: &WriteOp) -> Result<WriteOutcome, StoreError>;
}

#[derive(Debug, Clone)]
struct TableData {
    def: TableDef,
    rows: BTreeMap<Scalar, Row>,
    /// column -> value -> primary keys, for every foreign-key column
    indexes: HashMap<String, HashMap<Scalar, BTreeSet<Scalar>>>,
    /// Highest integer key ever used; keys are never reused.
    next_id: i64,
}

impl TableData {
    fn new(def: TableDef) -> Self {
        let indexes = def
            .foreign_keys
            .iter()
            .map(|fk| (fk.column.clone(), HashMap::new()))
            .collect();
        TableData {
            def,
            rows: BTreeMap::new(),
            indexes,
            next_id: 1,
        }
    }

    fn index_row(&mut self, pk: &Scalar, row: &Row) {
        for (col, index) in &mut self.indexes {
            if let Some(v) = row.get(col) {
                index.entry(v.clone()).or_default().insert(pk.clone());
            }
        }
    }

    fn unindex_row(&mut self, pk: &Scalar, row: &Row) {
        for (col, index) in &mut self.indexes {
            if let Some(v) = row.get(col) {
                if let Some(set) = index.get_mut(v) {
                    set.remove(pk);
                    if set.is_empty() {
                        index.remove(v);
                    }
                }
            }
        }
    }

    fn check_types(&self, row: &Row) -> Result<(), StoreError> {
        for (col, v) in row {
            if !self.def.has_column(col) {
                return Err(StoreError::UnknownColumn(format!(
                    "{}.{col}",
                    self.def.name
                )));
            }
            if !v.fits(self.def.column_types.get(col).copied()) {
                return Err(StoreError::Constraint(format!(
                    "{}.{col}: value {v} has the wrong type",
                    self.def.name
                )));
            }
        }
        Ok(())
    }

    /// Primary keys that may satisfy `preds`, using the PK or an index when
    /// some membership predicate allows it.
    fn candidates(&self, preds: &[&Predicate]) -> Vec<Scalar> {
        for p in preds {
            if !p.op.is_membership() {
                continue;
            }
            if p.column.column == self.def.primary_key {
                let mut keys: Vec<Scalar> = p
                    .values
                    .iter()
                    .filter(|v| self.rows.contains_key(*v))
                    .cloned()
                    .collect();
                keys.sort();
                keys.dedup();
                return keys;
            }
            if let Some(index) = self.indexes.get(&p.column.column) {
                let keys: BTreeSet<Scalar> = p
                    .values
                    .iter()
                    .filter_map(|v| index.get(v))
                    .flatten()
                    .cloned()
                    .collect();
                return keys.into_iter().collect();
            }
        }
        self.rows.keys().cloned().collect()
    }

    /// Upper bound on `candidates(preds).len()` without materializing it.
    fn estimate(&self, preds: &[&Predicate]) -> usize {
        for p in preds {
            if !p.op.is_membership() {
                continue;
            }
            if p.column.column == self.def.primary_key {
                return p.values.len();
            }
            if let Some(index) = self.indexes.get(&p.column.column) {
                return p
                    .values
                    .iter()
                    .filter_map(|v| index.get(v))
                    .map(BTreeSet::len)
                    .sum();
            }
        }
        self.rows.len()
    }

    fn matching(&self, preds: &[Predicate]) -> Vec<Scalar> {
        let refs: Vec<&Predicate> = preds.iter().collect();
        self.candidates(&refs)
            .into_iter()
            .filter(|pk| {
                let row = &self.rows[pk];
                preds.iter().all(|p| p.matches(row.get(&p.column.column)))
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct InMemoryStore {
    schema: Schema,
    tables: BTreeMap<String, RwLock<TableData>>,
    reads: AtomicU64,
}

impl Clone for InMemoryStore {
    fn clone(&self) -> Self {
        InMemoryStore {
            schema: self.schema.clone(),
            tables: self
                .tables
                .iter()
                .map(|(k, v)| (k.clone(), RwLock::new(v.read().clone())))
                .collect(),
            reads: AtomicU64::new(0),
        }
    }
}

impl InMemoryStore {
    pub fn new(schema: Schema) -> Self {
        let tables = schema
            .tables()
            .iter()
            .map(|t| (t.name.clone(), RwLock::new(TableData::new(t.clone()))))
            .collect();
        InMemoryStore {
            schema,
            tables,
            reads: AtomicU64::new(0),
        }
    }

    /// Store seeded with a fixture's rows, inserted table by table in
    /// schema order.
    pub fn from_fixture(schema: Schema, fixture: &Fixture) -> Result<Self, StoreError> {
        let store = InMemoryStore::new(schema);
        for name in fixture.rows.keys() {
            if !store.tables.contains_key(name) {
                return Err(StoreError::UnknownTable(name.clone()));
            }
        }
        let order: Vec<String> = store
            .schema
            .tables()
            .iter()
            .map(|t| t.name.clone())
            .collect();
        for table in order {
            for row in fixture.rows.get(&table).into_iter().flatten() {
                store.apply(&WriteOp::Insert {
                    table: table.clone(),
                    values: row.clone(),
                })?;
            }
        }
        store.reads.store(0, Ordering::Relaxed);
        Ok(store)
    }

    /// Number of `enumerate` and `select` calls served so far.
    pub fn read_count(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn reset_read_count(&self) {
        self.reads.store(0, Ordering::Relaxed);
    }

    pub fn row_count(&self, table: &str) -> usize {
        self.tables.get(table).map_or(0, |t| t.read().rows.len())
    }

    fn table(&self, name: &str) -> Result<&RwLock<TableData>, StoreError> {
        self.tables
            .get(name)
            .ok_or_else(|| StoreError::UnknownTable(name.to_string()))
    }

    fn check_write_column(&self, table: &str, c: &ColumnRef) -> Result<(), StoreError> {
        if c.table != table {
            return Err(StoreError::UnknownColumn(c.to_string()));
        }
        self.check_column(c)
    }

    fn check_column(&self, c: &ColumnRef) -> Result<(), StoreError> {
        if self.schema.has_column(&c.table, &c.column) {
            Ok(())
        } else {
            Err(StoreError::UnknownColumn(c.to_string()))
        }
    }
}

/// Evaluates one conjunction over read-locked tables; returns primary-key
/// combinations in `tables` order.
fn eval_conjunction(
    tables: &[String],
    data: &BTreeMap<&str, RwLockReadGuard<'_, TableData>>,
    joins: &[JoinCondition],
    preds: &[Predicate],
) -> Vec<Vec<Scalar>> {
    let n = tables.len();
    let pos = |t: &str| tables.iter().position(|x| x == t);
    let local: Vec<Vec<&Predicate>> = tables
        .iter()
        .map(|t| preds.iter().filter(|p| &p.column.table == t).collect())
        .collect();

    // seed with the table whose predicates narrow the most
    let seed = (0..n)
        .min_by_key(|&i| data[tables[i].as_str()].estimate(&local[i]))
        .unwrap_or(0);
    let mut order = vec![seed];
    while order.len() < n {
        let next = (0..n)
            .filter(|i| !order.contains(i))
            .find(|&i| {
                joins.iter().any(|j| {
                    let (l, r) = (pos(&j.left.table), pos(&j.right.table));
                    (l == Some(i) && r.is_some_and(|r| order.contains(&r)))
                        || (r == Some(i) && l.is_some_and(|l| order.contains(&l)))
                })
            })
            .or_else(|| (0..n).find(|i| !order.contains(i)))
            .expect("unbound table remains");
        order.push(next);
    }

    let row_of = |i: usize, pk: &Scalar| -> &Row { &data[tables[i].as_str()].rows[pk] };
    let mut partial: Vec<Vec<Option<Scalar>>> = data[tables[seed].as_str()]
        .candidates(&local[seed])
        .into_iter()
        .filter(|pk| {
            local[seed]
                .iter()
                .all(|p| p.matches(row_of(seed, pk).get(&p.column.column)))
        })
        .map(|pk| {
            let mut combo = vec![None; n];
            combo[seed] = Some(pk);
            combo
        })
        .collect();

    for &i in &order[1..] {
        let table = &data[tables[i].as_str()];
        let mut next = Vec::new();
        for combo in partial {
            // join predicates binding table i to already-bound tables
            let mut bound: Vec<Predicate> = local[i].iter().map(|p| (*p).clone()).collect();
            let mut unsatisfiable = false;
            for j in joins {
                let (mine, other) = if j.left.table == tables[i] {
                    (&j.left, &j.right)
                } else if j.right.table == tables[i] {
                    (&j.right, &j.left)
                } else {
                    continue;
                };
                let Some(o) = pos(&other.table) else { continue };
                let Some(opk) = &combo[o] else { continue };
                match row_of(o, opk).get(&other.column) {
                    Some(v) => bound.push(Predicate::eq(mine.clone(), v.clone())),
                    None => unsatisfiable = true,
                }
            }
            if unsatisfiable {
                continue;
            }
            for pk in table.matching(&bound) {
                let mut c = combo.clone();
                c[i] = Some(pk);
                next.push(c);
            }
        }
        partial = next;
    }

    partial
        .into_iter()
        .map(|c| {
            c.into_iter()
                .map(|k| k.expect("all tables bound"))
                .collect()
        })
        .filter(|combo: &Vec<Scalar>| {
            // join conditions between tables bound in either order
            joins.iter().all(|j| {
                let (Some(l), Some(r)) = (pos(&j.left.table), pos(&j.right.table)) else {
                    return false;
                };
                let lv = row_of(l, &combo[l]).get(&j.left.column);
                let rv = row_of(r, &combo[r]).get(&j.right.column);
                lv.is_some() && lv == rv
            })
        })
        .collect()
}

impl ResourceStore for InMemoryStore {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn enumerate(&self, table: &str) -> Result<Vec<Row>, StoreError> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        Ok(self.table(table)?.read().rows.values().cloned().collect())
    }

    fn select(&self, query: &Query) -> Result<Vec<Vec<Option<Scalar>>>, StoreError> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        for c in query
            .output
            .iter()
            .chain(query.joins.iter().flat_map(|j| [&j.left, &j.right]))
            .chain(query.filter.iter().flatten().map(|p| &p.column))
        {
            if !query.tables.contains(&c.table) {
                return Err(StoreError::UnknownColumn(c.to_string()));
            }
            self.check_column(c)?;
        }
        // sorted lock order keeps concurrent multi-table readers deadlock-free
        let mut names: Vec<&str> = query.tables.iter().map(String::as_str).collect();
        names.sort_unstable();
        names.dedup();
        let mut data = BTreeMap::new();
        for name in names {
            data.insert(name, self.table(name)?.read());
        }
        let mut combos: BTreeSet<Vec<Scalar>> = BTreeSet::new();
        for conj in &query.filter {
            combos.extend(eval_conjunction(&query.tables, &data, &query.joins, conj));
        }
        let pos = |t: &str| {
            query
                .tables
                .iter()
                .position(|x| x == t)
                .expect("checked above")
        };
        let out = combos
            .iter()
            .skip(query.offset.unwrap_or(0))
            .take(query.limit.unwrap_or(usize::MAX))
            .map(|combo| {
                query
                    .output
                    .iter()
                    .map(|c| {
                        let i = pos(&c.table);
                        data[query.tables[i].as_str()].rows[&combo[i]]
                            .get(&c.column)
                            .cloned()
                    })
                    .collect()
            })
            .collect();
        Ok(out)
    }

    fn apply(&self, op: &WriteOp) -> Result<WriteOutcome, StoreError> {
        match op {
            WriteOp::Insert { table, values } => {
                let mut t = self.table(table)?.write();
                t.check_types(values)?;
                let pk_col = t.def.primary_key.clone();
                let mut row = values.clone();
                let pk = match row.get(&pk_col) {
                    Some(pk) => pk.clone(),
                    None => {
                        if t.def.column_types.get(&pk_col) == Some(&ScalarKind::String) {
                            return Err(StoreError::Constraint(format!(
                                "{table}.{pk_col}: string keys must be supplied"
                            )));
                        }
                        let id = Scalar::Int(t.next_id);
                        row.insert(pk_col.clone(), id.clone());
                        id
                    }
                };
                if t.rows.contains_key(&pk) {
                    return Err(StoreError::Constraint(format!(
                        "duplicate key {table}.{pk_col} = {pk}"
                    )));
                }
                if let Scalar::Int(v) = pk {
                    t.next_id = t.next_id.max(v.saturating_add(1));
                }
                t.index_row(&pk, &row);
                t.rows.insert(pk.clone(), row);
                Ok(WriteOutcome {
                    affected: 1,
                    inserted_key: Some(pk),
                })
            }
            WriteOp::Update { table, set, filter } => {
                let mut t = self.table(table)?.write();
                t.check_types(set)?;
                if set.contains_key(&t.def.primary_key) {
                    return Err(StoreError::Unsupported(format!(
                        "updating primary key of `{table}`"
                    )));
                }
                for p in filter {
                    self.check_write_column(table, &p.column)?;
                }
                let keys = t.matching(filter);
                for pk in &keys {
                    let old = t.rows[pk].clone();
                    t.unindex_row(pk, &old);
                    let mut row = old;
                    for (c, v) in set {
                        row.insert(c.clone(), v.clone());
                    }
                    t.index_row(pk, &row);
                    t.rows.insert(pk.clone(), row);
                }
                Ok(WriteOutcome {
                    affected: keys.len() as u64,
                    inserted_key: None,
                })
            }
            WriteOp::Delete { table, filter } => {
                let mut t = self.table(table)?.write();
                for p in filter {
                    self.check_write_column(table, &p.column)?;
                }
                let keys = t.matching(filter);
                for pk in &keys {
                    if let Some(row) = t.rows.remove(pk) {
                        t.unindex_row(pk, &row);
                    }
                }
                Ok(WriteOutcome {
                    affected: keys.len() as u64,
                    inserted_key: None,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::load_schema;

    fn store() -> InMemoryStore {
        let schema = load_schema(
            r#"{"tables":[
            {"name":"user","columns":["id","name"],"primary_key":"id"},
            {"name":"blog","columns":["id","user_id","title"],"primary_key":"id",
             "foreign_keys":[{"column":"user_id","ref_table":"user","ref_column":"id"}]}]}"#,
        )
        .unwrap();
        let s = InMemoryStore::new(schema);
        for (id, name) in [(1, "a"), (2, "b")] {
            let row: Row = [("id".into(), Scalar::Int(id)), ("name".into(), name.into())].into();
            s.apply(&WriteOp::Insert {
                table: "user".into(),
                values: row,
            })
            .unwrap();
        }
        for (uid, title) in [(1, "x"), (1, "y"), (2, "z")] {
            let row: Row = [
                ("user_id".into(), Scalar::Int(uid)),
                ("title".into(), title.into()),
            ]
            .into();
            s.apply(&WriteOp::Insert {
                table: "blog".into(),
                values: row,
            })
            .unwrap();
        }
        s
    }

    fn col(t: &str, c: &str) -> ColumnRef {
        ColumnRef::new(t, c)
    }

    #[test]
    fn auto_increment_and_index_lookup() {
        let s = store();
        let q = Query::new(vec!["blog".into()], vec![], vec![col("blog", "id")]).with_filter(vec![
            vec![Predicate::eq(col("blog", "user_id"), Scalar::Int(1))],
        ]);
        let rows = s.select(&q).unwrap();
        assert_eq!(
            rows,
            vec![vec![Some(Scalar::Int(1))], vec![Some(Scalar::Int(2))]]
        );
    }

    #[test]
    fn join_and_disjunction() {
        let s = store();
        let q = Query::new(
            vec!["blog".into(), "user".into()],
            vec![JoinCondition {
                left: col("blog", "user_id"),
                right: col("user", "id"),
            }],
            vec![col("blog", "id")],
        )
        .with_filter(vec![
            vec![Predicate::eq(col("user", "name"), "b".into())],
            vec![Predicate::eq(col("blog", "title"), "x".into())],
        ]);
        let ids: Vec<_> = s
            .select(&q)
            .unwrap()
            .into_iter()
            .map(|r| r[0].clone().unwrap())
            .collect();
        assert_eq!(ids, vec![Scalar::Int(1), Scalar::Int(3)]);
        assert!(s.select(&q.clone().with_filter(vec![])).unwrap().is_empty());
    }

    #[test]
    fn delete_keeps_ids_monotonic() {
        let s = store();
        let out = s
            .apply(&WriteOp::Delete {
                table: "blog".into(),
                filter: vec![Predicate::eq(col("blog", "id"), Scalar::Int(3))],
            })
            .unwrap();
        assert_eq!(out.affected, 1);
        let row: Row = [("user_id".into(), Scalar::Int(2))].into();
        let out = s
            .apply(&WriteOp::Insert {
                table: "blog".into(),
                values: row,
            })
            .unwrap();
        assert_eq!(out.inserted_key, Some(Scalar::Int(4)));
    }

    #[test]
    fn update_maintains_index() {
        let s = store();
        let set: Row = [("user_id".into(), Scalar::Int(2))].into();
        let out = s
            .apply(&WriteOp::Update {
                table: "blog".into(),
                set,
                filter: vec![Predicate::eq(col("blog", "id"), Scalar::Int(1))],
            })
            .unwrap();
        assert_eq!(out.affected, 1);
        let q = Query::new(vec!["blog".into()], vec![], vec![col("blog", "id")]).with_filter(vec![
            vec![Predicate::eq(col("blog", "user_id"), Scalar::Int(2))],
        ]);
        assert_eq!(s.select(&q).unwrap().len(), 2);
    }

    #[test]
    fn type_aware_comparison() {
        let p = Predicate::eq(col("blog", "id"), Scalar::Int(1));
        assert!(!p.matches(Some(&Scalar::Str("1".into()))));
        assert!(!p.matches(None));
        let l = Predicate::new(col("blog", "title"), CompareOp::Like, vec!["a%c_".into()]);
        assert!(l.matches(Some(&"abbcd".into())));
        assert!(!l.matches(Some(&"abbc".into())));
        let lt = Predicate::new(col("blog", "id"), CompareOp::Lt, vec![Scalar::Int(3)]);
        assert!(lt.matches(Some(&Scalar::Int(2))));
        assert!(!lt.matches(Some(&"2".into())));
    }
}
