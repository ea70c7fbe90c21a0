use std::collections::BTreeSet;

use super::{Dependency, MsgInterval};
use crate::app::{AppModel, EndpointModel};
use crate::classify::Classification;
use crate::schema::{ResourceIdKind, Schema};
use crate::sql::{reduce_select, ValueSource};

/// One interval per (producing SELECT, produced kind) of a producer.
pub fn build_intervals(producer: &Classification, model: &AppModel) -> Vec<MsgInterval> {
    if !producer.role.creates_intervals() {
        return Vec::new();
    }
    let Some(ep) = model.endpoint(&producer.endpoint) else {
        return Vec::new();
    };
    let mut seen = BTreeSet::new();
    producer
        .produced
        .iter()
        .filter(|p| seen.insert((p.stmt.clone(), p.kind.clone())))
        .filter_map(|p| interval_for(ep, &p.stmt, &p.kind, model.schema()))
        .collect()
}

/// Reduced interval of `stmt` for `kind`, with dependencies read off the
/// retained conditions. `None` if the statement does not project `kind`.
pub(crate) fn interval_for(
    ep: &EndpointModel,
    stmt: &str,
    kind: &ResourceIdKind,
    schema: &Schema,
) -> Option<MsgInterval> {
    let select = ep.stmt(stmt)?.as_select()?;
    let reduced = reduce_select(select, schema).ok()?;
    if !reduced.produces(kind) {
        return None;
    }
    let mut deps = BTreeSet::new();
    for c in &reduced.retained {
        match &c.value {
            ValueSource::TokenDerived { claim } => {
                deps.insert(Dependency::TokenUser {
                    claim: claim.clone(),
                });
            }
            ValueSource::SqlOutput {
                stmt: parent,
                column,
            } => {
                let parent_kind = ep
                    .stmt(parent)
                    .and_then(|s| s.as_select())
                    .and_then(|s| s.output_column(column))
                    .and_then(|col| schema.resource_kind(&col.table, &col.column));
                if let Some(pk) = parent_kind {
                    deps.insert(Dependency::ParentInterval {
                        interval_id: MsgInterval::interval_id(ep.id(), parent, &pk),
                        via_column: c.column.clone(),
                    });
                }
            }
            ValueSource::Param { name, .. } => {
                if let Some(k) = schema.resource_kind(&c.column.table, &c.column.column) {
                    deps.insert(Dependency::ConsumedKind {
                        kind: k,
                        via_param: name.clone(),
                    });
                }
            }
            _ => {}
        }
    }
    Some(MsgInterval {
        id: MsgInterval::interval_id(ep.id(), stmt, kind),
        producer_endpoint: ep.id().to_string(),
        stmt: stmt.to_string(),
        reduced,
        kind: kind.clone(),
        deps: deps.into_iter().collect(),
        incomplete: false,
    })
}
