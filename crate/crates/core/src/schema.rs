//! Relational schema model and resource-ID column lookup.
//!
//! Every table has exactly one primary-key column. Primary keys and foreign
//! keys are the resource IDs of the application: they are what a client
//! passes back to the server to name an object.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("schema parse error: {0}")]
    Parse(String),
    #[error("schema validation error: {0}")]
    Validation(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
}

/// Optional scalar type of a column. Only the store looks at it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarKind {
    Integer,
    String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ForeignKey {
    pub column: String,
    pub ref_table: String,
    pub ref_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<String>,
    pub primary_key: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub foreign_keys: Vec<ForeignKey>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub column_types: BTreeMap<String, ScalarKind>,
}

impl TableDef {
    pub fn has_column(&self, column: &str) -> bool {
        self.columns.iter().any(|c| c == column)
    }

    pub fn foreign_key(&self, column: &str) -> Option<&ForeignKey> {
        self.foreign_keys.iter().find(|fk| fk.column == column)
    }

    /// Primary-key and foreign-key columns, in that order.
    pub fn key_columns(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.primary_key.as_str())
            .chain(self.foreign_keys.iter().map(|fk| fk.column.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyRole {
    PrimaryKey,
    ForeignKey {
        ref_table: String,
        ref_column: String,
    },
}

/// Identity of a resource-ID column.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResourceIdKind {
    pub table: String,
    pub column: String,
    pub role: KeyRole,
}

impl ResourceIdKind {
    pub fn is_primary(&self) -> bool {
        matches!(self.role, KeyRole::PrimaryKey)
    }

    /// The primary-key column whose values this kind ranges over. For a
    /// primary key that is the column itself; for a foreign key it is the
    /// referenced column.
    pub fn domain(&self) -> (&str, &str) {
        match &self.role {
            KeyRole::PrimaryKey => (&self.table, &self.column),
            KeyRole::ForeignKey {
                ref_table,
                ref_column,
            } => (ref_table, ref_column),
        }
    }

    /// Whether both kinds range over the same identifier domain.
    pub fn same_domain(&self, other: &ResourceIdKind) -> bool {
        self.domain() == other.domain()
    }

    pub fn qualified(&self) -> String {
        format!("{}.{}", self.table, self.column)
    }
}

impl fmt::Display for ResourceIdKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.role {
            KeyRole::PrimaryKey => write!(f, "PK {}.{}", self.table, self.column),
            KeyRole::ForeignKey {
                ref_table,
                ref_column,
            } => write!(
                f,
                "FK {}.{} -> {}.{}",
                self.table, self.column, ref_table, ref_column
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Schema {
    tables: Vec<TableDef>,
}

// Raw document shape; primary keys may be written as a list so that
// composite keys can be rejected with a useful message.
#[derive(Deserialize)]
struct RawSchema {
    tables: Vec<RawTable>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawPrimaryKey {
    One(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
struct RawTable {
    name: String,
    columns: Vec<String>,
    primary_key: RawPrimaryKey,
    #[serde(default)]
    foreign_keys: Vec<ForeignKey>,
    #[serde(default)]
    column_types: BTreeMap<String, ScalarKind>,
}

impl<'de> Deserialize<'de> for Schema {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawSchema::deserialize(deserializer)?;
        let mut tables = Vec::with_capacity(raw.tables.len());
        for t in raw.tables {
            let primary_key = match t.primary_key {
                RawPrimaryKey::One(pk) => pk,
                RawPrimaryKey::Many(mut keys) if keys.len() == 1 => keys.remove(0),
                RawPrimaryKey::Many(keys) => {
                    return Err(serde::de::Error::custom(SchemaError::Validation(format!(
                        "table `{}`: composite primary key {:?} is not supported",
                        t.name, keys
                    ))))
                }
            };
            tables.push(TableDef {
                name: t.name,
                columns: t.columns,
                primary_key,
                foreign_keys: t.foreign_keys,
                column_types: t.column_types,
            });
        }
        Schema::new(tables).map_err(serde::de::Error::custom)
    }
}

/// Parses and validates a schema document.
pub fn load_schema(document: &str) -> Result<Schema, SchemaError> {
    serde_json::from_str(document).map_err(|e| {
        let msg = e.to_string();
        if e.is_data() && msg.contains("validation") {
            SchemaError::Validation(msg)
        } else {
            SchemaError::Parse(msg)
        }
    })
}

impl Schema {
    pub fn new(tables: Vec<TableDef>) -> Result<Self, SchemaError> {
        let schema = Schema { tables };
        schema.validate()?;
        Ok(schema)
    }

    pub fn empty() -> Self {
        Schema { tables: Vec::new() }
    }

    pub(crate) fn validate(&self) -> Result<(), SchemaError> {
        let invalid = |msg: String| Err(SchemaError::Validation(msg));
        let mut names = BTreeSet::new();
        for t in &self.tables {
            if !names.insert(t.name.as_str()) {
                return invalid(format!("duplicate table `{}`", t.name));
            }
            let mut cols = BTreeSet::new();
            for c in &t.columns {
                if !cols.insert(c.as_str()) {
                    return invalid(format!("table `{}`: duplicate column `{c}`", t.name));
                }
            }
            if t.primary_key.is_empty() || !t.has_column(&t.primary_key) {
                return invalid(format!(
                    "table `{}`: missing primary key column `{}`",
                    t.name, t.primary_key
                ));
            }
            let mut fk_cols = BTreeSet::new();
            for fk in &t.foreign_keys {
                if !t.has_column(&fk.column) {
                    return invalid(format!(
                        "table `{}`: foreign key column `{}` is not a column",
                        t.name, fk.column
                    ));
                }
                if !fk_cols.insert(fk.column.as_str()) {
                    return invalid(format!(
                        "table `{}`: column `{}` has two foreign keys",
                        t.name, fk.column
                    ));
                }
                if fk.column == t.primary_key {
                    return invalid(format!(
                        "table `{}`: primary key `{}` cannot also be a foreign key",
                        t.name, fk.column
                    ));
                }
            }
            for name in t.column_types.keys() {
                if !t.has_column(name) {
                    return invalid(format!(
                        "table `{}`: typed column `{name}` is not a column",
                        t.name
                    ));
                }
            }
        }
        for t in &self.tables {
            for fk in &t.foreign_keys {
                let Some(target) = self.table(&fk.ref_table) else {
                    return invalid(format!(
                        "table `{}`: foreign key `{}` references missing table `{}`",
                        t.name, fk.column, fk.ref_table
                    ));
                };
                if target.primary_key != fk.ref_column {
                    return invalid(format!(
                        "table `{}`: foreign key `{}` must reference the primary key of `{}`",
                        t.name, fk.column, fk.ref_table
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn tables(&self) -> &[TableDef] {
        &self.tables
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn has_column(&self, table: &str, column: &str) -> bool {
        self.table(table).is_some_and(|t| t.has_column(column))
    }

    /// Resource-ID kind of one column, if the column is a key.
    pub fn resource_kind(&self, table: &str, column: &str) -> Option<ResourceIdKind> {
        let t = self.table(table)?;
        if t.primary_key == column {
            return Some(ResourceIdKind {
                table: table.to_string(),
                column: column.to_string(),
                role: KeyRole::PrimaryKey,
            });
        }
        t.foreign_key(column).map(|fk| ResourceIdKind {
            table: table.to_string(),
            column: column.to_string(),
            role: KeyRole::ForeignKey {
                ref_table: fk.ref_table.clone(),
                ref_column: fk.ref_column.clone(),
            },
        })
    }

    pub fn is_foreign_key(&self, table: &str, column: &str) -> bool {
        self.table(table)
            .is_some_and(|t| t.foreign_key(column).is_some())
    }

    /// The primary-key kind followed by one kind per foreign key, in
    /// declaration order.
    pub fn resource_id_columns(&self, table: &str) -> Result<Vec<ResourceIdKind>, SchemaError> {
        let t = self
            .table(table)
            .ok_or_else(|| SchemaError::UnknownTable(table.to_string()))?;
        Ok(t.key_columns()
            .filter_map(|c| self.resource_kind(table, c))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blog_schema() -> &'static str {
        r#"{"tables": [
            {"name": "user", "columns": ["id", "name"], "primary_key": "id"},
            {"name": "blog", "columns": ["id", "user_id", "title"], "primary_key": "id",
             "foreign_keys": [{"column": "user_id", "ref_table": "user", "ref_column": "id"}]},
            {"name": "comment", "columns": ["id", "blog_id", "body"], "primary_key": "id",
             "foreign_keys": [{"column": "blog_id", "ref_table": "blog", "ref_column": "id"}]}
        ]}"#
    }

    #[test]
    fn loads_blog_and_comment() {
        let s = load_schema(blog_schema()).unwrap();
        assert_eq!(s.tables().len(), 3);
        let fks: usize = s.tables().iter().map(|t| t.foreign_keys.len()).sum();
        assert_eq!(fks, 2);
    }

    #[test]
    fn minimal_schema() {
        let s = load_schema(r#"{"tables":[{"name":"user","columns":["id"],"primary_key":"id"}]}"#)
            .unwrap();
        assert_eq!(s.tables().len(), 1);
        assert!(s.tables()[0].foreign_keys.is_empty());
    }

    #[test]
    fn dangling_foreign_key_is_rejected() {
        let err = load_schema(
            r#"{"tables":[{"name":"blog","columns":["id","user_id"],"primary_key":"id",
                "foreign_keys":[{"column":"user_id","ref_table":"user","ref_column":"id"}]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, SchemaError::Validation(_)), "{err:?}");
    }

    #[test]
    fn duplicate_table_and_missing_pk() {
        let dup = r#"{"tables":[{"name":"a","columns":["id"],"primary_key":"id"},
                                {"name":"a","columns":["id"],"primary_key":"id"}]}"#;
        assert!(matches!(load_schema(dup), Err(SchemaError::Validation(_))));
        let nopk = r#"{"tables":[{"name":"a","columns":["x"],"primary_key":"id"}]}"#;
        assert!(matches!(load_schema(nopk), Err(SchemaError::Validation(_))));
    }

    #[test]
    fn composite_primary_key_is_rejected() {
        let doc = r#"{"tables":[{"name":"a","columns":["x","y"],"primary_key":["x","y"]}]}"#;
        assert!(matches!(load_schema(doc), Err(SchemaError::Validation(_))));
    }

    #[test]
    fn malformed_document() {
        assert!(matches!(
            load_schema("{\"tables\": ["),
            Err(SchemaError::Parse(_))
        ));
    }

    #[test]
    fn address_resource_ids() {
        let s = load_schema(
            r#"{"tables":[{"name":"user","columns":["id"],"primary_key":"id"},
               {"name":"address","columns":["a_id","user_id","addr","detail"],"primary_key":"a_id",
                "foreign_keys":[{"column":"user_id","ref_table":"user","ref_column":"id"}]}]}"#,
        )
        .unwrap();
        let ids = s.resource_id_columns("address").unwrap();
        assert_eq!(ids.len(), 2);
        assert_eq!(ids[0].column, "a_id");
        assert!(ids[0].is_primary());
        assert_eq!(ids[1].column, "user_id");
        assert_eq!(ids[1].domain(), ("user", "id"));
        assert_eq!(s.resource_id_columns("user").unwrap().len(), 1);
        assert!(matches!(
            s.resource_id_columns("nope"),
            Err(SchemaError::UnknownTable(_))
        ));
    }
}
