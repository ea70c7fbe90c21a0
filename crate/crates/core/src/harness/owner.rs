use std::collections::{BTreeMap, BTreeSet};

use super::HarnessError;
use crate::app::AppModel;
use crate::runtime::UserContext;
use crate::schema::ResourceIdKind;
use crate::sql::Scalar;
use crate::store::ResourceStore;

/// Which rows each user owns: the row a user's token claim names, and every
/// row that reaches an owned row through foreign keys.
#[derive(Debug, Clone, Default)]
pub struct Ownership {
    /// user -> table -> primary keys
    owned: BTreeMap<String, BTreeMap<String, BTreeSet<Scalar>>>,
}

impl Ownership {
    pub fn compute(
        model: &AppModel,
        users: &[UserContext],
        store: &dyn ResourceStore,
    ) -> Result<Self, HarnessError> {
        let schema = store.schema();
        let mut tables = BTreeMap::new();
        for t in schema.tables() {
            tables.insert(t.name.clone(), store.enumerate(&t.name)?);
        }
        let mut owned = BTreeMap::new();
        for u in users {
            let mut mine: BTreeMap<String, BTreeSet<Scalar>> = BTreeMap::new();
            for c in model.token_claims() {
                let (Some(col), Some(value)) = (&c.maps_to, u.claims.get(&c.claim)) else {
                    continue;
                };
                let Some(def) = schema.table(&col.table) else {
                    continue;
                };
                for row in &tables[&col.table] {
                    if row.get(&col.column) == Some(value) {
                        if let Some(pk) = row.get(&def.primary_key) {
                            mine.entry(col.table.clone())
                                .or_default()
                                .insert(pk.clone());
                        }
                    }
                }
            }
            // follow foreign keys until nothing new is owned
            loop {
                let mut grew = false;
                for def in schema.tables() {
                    for row in &tables[&def.name] {
                        let Some(pk) = row.get(&def.primary_key) else {
                            continue;
                        };
                        if mine.get(&def.name).is_some_and(|s| s.contains(pk)) {
                            continue;
                        }
                        let reaches = def.foreign_keys.iter().any(|fk| {
                            row.get(&fk.column).is_some_and(|v| {
                                mine.get(&fk.ref_table).is_some_and(|s| s.contains(v))
                            })
                        });
                        if reaches {
                            mine.entry(def.name.clone()).or_default().insert(pk.clone());
                            grew = true;
                        }
                    }
                }
                if !grew {
                    break;
                }
            }
            owned.insert(u.user_id.clone(), mine);
        }
        Ok(Ownership { owned })
    }

    /// Key values of `kind`'s domain owned by `user`.
    pub fn values(&self, user: &str, kind: &ResourceIdKind) -> BTreeSet<Scalar> {
        let (table, _) = kind.domain();
        self.owned
            .get(user)
            .and_then(|t| t.get(table))
            .cloned()
            .unwrap_or_default()
    }

    /// Whether any user owns a row of `kind`'s domain.
    pub fn anchors(&self, kind: &ResourceIdKind) -> bool {
        let (table, _) = kind.domain();
        self.owned
            .values()
            .any(|t| t.get(table).is_some_and(|s| !s.is_empty()))
    }
}
