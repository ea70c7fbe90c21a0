//! Merge rules for intervals guarding the same injection point.
//!
//! Both rules compare condition sets syntactically after normalization, so a
//! merge never changes which values an interval set admits.

use std::collections::BTreeSet;

use super::{CompareOp, Condition, JoinCondition, ReducedSelect, SqlError, ValueSource};
use crate::schema::ResourceIdKind;

/// Canonical form of a condition for set comparison.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConditionKey {
    pub column: String,
    pub op: CompareOp,
    pub value: ValueSource,
}

fn key(c: &Condition) -> ConditionKey {
    let op = if c.op.is_membership() {
        CompareOp::In
    } else {
        c.op
    };
    let value = match &c.value {
        ValueSource::Constant(lit) => ValueSource::Constant(lit.canonical()),
        ValueSource::IntervalRef { intervals } => {
            let mut ids = intervals.clone();
            ids.sort();
            ids.dedup();
            ValueSource::IntervalRef { intervals: ids }
        }
        other => other.clone(),
    };
    ConditionKey {
        column: c.column.to_string(),
        op,
        value,
    }
}

/// Sorted, deduplicated, table-qualified condition keys.
pub fn normalized_conditions(conds: &[Condition]) -> BTreeSet<ConditionKey> {
    conds.iter().map(key).collect()
}

fn joins(r: &ReducedSelect) -> BTreeSet<JoinCondition> {
    r.base
        .join_conditions
        .iter()
        .map(JoinCondition::normalized)
        .collect()
}

fn check_kind(
    si: &ReducedSelect,
    sj: &ReducedSelect,
    kind: &ResourceIdKind,
) -> Result<(), SqlError> {
    if !si.produces(kind) || !sj.produces(kind) {
        return Err(SqlError::KindMismatch(format!(
            "both statements must produce {kind}"
        )));
    }
    Ok(())
}

/// Whether every row admitted by `narrow` is admitted by `broad`, judged
/// syntactically: `broad` uses a subset of the tables and joins, and each
/// disjunct of `narrow` contains some disjunct of `broad`.
fn syntactically_covers(broad: &ReducedSelect, narrow: &ReducedSelect) -> bool {
    let tables_b: BTreeSet<&String> = broad.base.tables.iter().collect();
    let tables_n: BTreeSet<&String> = narrow.base.tables.iter().collect();
    if !tables_b.is_subset(&tables_n) || !joins(broad).is_subset(&joins(narrow)) {
        return false;
    }
    let broad_sets: Vec<_> = broad.disjuncts().map(normalized_conditions).collect();
    narrow.disjuncts().all(|d| {
        let d = normalized_conditions(d);
        broad_sets.iter().any(|b| b.is_subset(&d))
    })
}

/// Subset rule: when `si` admits everything `sj` admits, the pair collapses
/// to `si`.
pub fn merge_subset(
    si: &ReducedSelect,
    sj: &ReducedSelect,
    kind: &ResourceIdKind,
) -> Result<Option<ReducedSelect>, SqlError> {
    check_kind(si, sj, kind)?;
    Ok(syntactically_covers(si, sj).then(|| si.clone()))
}

/// Union rule for two single-table intervals over the same table whose
/// condition sets are not nested: the result admits exactly the union.
///
/// Returns `None` when the subset rule applies instead, or when either side
/// is a multi-table query.
pub fn merge_union(
    si: &ReducedSelect,
    sj: &ReducedSelect,
    kind: &ResourceIdKind,
) -> Result<Option<ReducedSelect>, SqlError> {
    check_kind(si, sj, kind)?;
    if !si.is_single_table() || !sj.is_single_table() {
        return Ok(None);
    }
    if si.base.tables != sj.base.tables {
        return Err(SqlError::KindMismatch(format!(
            "tables differ: {:?} vs {:?}",
            si.base.tables, sj.base.tables
        )));
    }
    if syntactically_covers(si, sj) || syntactically_covers(sj, si) {
        return Ok(None);
    }
    let mut merged = si.clone();
    let mut seen: Vec<BTreeSet<ConditionKey>> =
        merged.disjuncts().map(normalized_conditions).collect();
    for d in sj.disjuncts() {
        let k = normalized_conditions(d);
        if !seen.contains(&k) {
            seen.push(k);
            merged.alternatives.push(d.to_vec());
        }
    }
    merged.resource_ids.retain(|k| sj.resource_ids.contains(k));
    Ok(Some(merged))
}
