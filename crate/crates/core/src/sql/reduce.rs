use super::{ReducedSelect, Select, SqlError};
use crate::schema::{ResourceIdKind, Schema};

/// Projected columns that are primary or foreign keys of their tables. An
/// empty result means the SELECT reads data but hands out no resource IDs.
pub fn projected_resource_ids(stmt: &Select, schema: &Schema) -> Vec<ResourceIdKind> {
    let mut out: Vec<ResourceIdKind> = Vec::new();
    for p in &stmt.projections {
        if let Some(c) = p.column() {
            if let Some(kind) = schema.resource_kind(&c.table, &c.column) {
                if !out.contains(&kind) {
                    out.push(kind);
                }
            }
        }
    }
    out
}

/// Widens a producer SELECT to the interval it grants.
///
/// Pagination is dropped, and so is every condition whose value the user
/// controls unless it sits on a foreign-key column. Join conditions stay.
pub fn reduce_select(stmt: &Select, schema: &Schema) -> Result<ReducedSelect, SqlError> {
    let resource_ids = projected_resource_ids(stmt, schema);
    if resource_ids.is_empty() {
        return Err(SqlError::NotAProducer);
    }
    let retained = stmt
        .where_
        .iter()
        .filter(|c| {
            !c.value.is_user_input() || schema.is_foreign_key(&c.column.table, &c.column.column)
        })
        .cloned()
        .collect();
    let mut base = stmt.clone();
    base.pagination = None;
    Ok(ReducedSelect {
        base,
        retained,
        alternatives: Vec::new(),
        resource_ids,
    })
}

/// Whether the interval admits every row of its table.
///
/// Only single-table intervals can qualify: an inner join may drop rows of
/// the main table even with no condition on it.
pub fn covers_full_table(r: &ReducedSelect, deps_resolved: bool) -> Result<bool, SqlError> {
    if !deps_resolved {
        return Err(SqlError::DependenciesUnresolved);
    }
    Ok(r.is_single_table() && r.disjuncts().any(<[_]>::is_empty))
}
