//! Endpoint roles in the resource-ID data flow and the injection points
//! where a user-supplied parameter reaches a key column.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::app::{AppModel, EndpointModel};
use crate::schema::{ResourceIdKind, Schema};
use crate::sql::SqlBody;
use crate::taint::{FlowFact, SqlPosition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Producer,
    Consumer,
    /// Returns only IDs of kinds it also consumes; handled as a consumer.
    FalseProducer,
    ProducerConsumer,
    Neither,
}

impl Role {
    /// Whether the endpoint's returns create authorization intervals.
    pub fn creates_intervals(self) -> bool {
        matches!(self, Role::Producer | Role::ProducerConsumer)
    }
}

/// Statement kinds and clause positions through which a parameter can
/// consume a resource ID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SqlOp {
    Select,
    Delete,
    Insert,
    #[serde(rename = "Update_Set")]
    UpdateSet,
    #[serde(rename = "Update_Where")]
    UpdateWhere,
}

impl fmt::Display for SqlOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SqlOp::Select => "Select",
            SqlOp::Delete => "Delete",
            SqlOp::Insert => "Insert",
            SqlOp::UpdateSet => "Update_Set",
            SqlOp::UpdateWhere => "Update_Where",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InjectionPoint {
    pub endpoint: String,
    pub param: String,
    pub kind: ResourceIdKind,
    pub stmt: String,
    pub sql_op: SqlOp,
}

impl InjectionPoint {
    /// Stable identifier, also used as the cache scope.
    pub fn id(&self) -> String {
        format!(
            "{}:{}:{}:{}",
            self.endpoint, self.param, self.stmt, self.sql_op
        )
    }
}

impl fmt::Display for InjectionPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{} ({} {} on {})",
            self.endpoint,
            self.param,
            self.sql_op,
            self.stmt,
            self.kind.qualified()
        )
    }
}

/// A resource ID an endpoint hands out through a return field.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Produced {
    pub kind: ResourceIdKind,
    pub stmt: String,
    pub return_field: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub endpoint: String,
    pub role: Role,
    pub produced: Vec<Produced>,
    pub injection_points: Vec<InjectionPoint>,
}

fn sql_op(stmt: &SqlBody, position: &SqlPosition) -> Option<SqlOp> {
    match (stmt, position) {
        (SqlBody::Select(_), SqlPosition::WhereCondition(_)) => Some(SqlOp::Select),
        (SqlBody::Delete(_), SqlPosition::WhereCondition(_)) => Some(SqlOp::Delete),
        (SqlBody::Insert(_), SqlPosition::InsertValue(_)) => Some(SqlOp::Insert),
        (SqlBody::Update(_), SqlPosition::SetValue(_)) => Some(SqlOp::UpdateSet),
        (SqlBody::Update(_), SqlPosition::WhereCondition(_)) => Some(SqlOp::UpdateWhere),
        _ => None,
    }
}

pub fn classify_endpoint(
    endpoint: &EndpointModel,
    facts: &[FlowFact],
    schema: &Schema,
) -> Classification {
    let id = endpoint.id();
    let mut produced = BTreeSet::new();
    let mut points = BTreeSet::new();
    for fact in facts {
        match fact {
            FlowFact::SqlToReturn {
                endpoint: e,
                stmt,
                column,
                return_field,
            } if e == id => {
                let is_select = endpoint.stmt(stmt).is_some_and(|s| s.as_select().is_some());
                if let (true, Some(kind)) = (
                    is_select,
                    schema.resource_kind(&column.table, &column.column),
                ) {
                    produced.insert(Produced {
                        kind,
                        stmt: stmt.clone(),
                        return_field: return_field.clone(),
                    });
                }
            }
            FlowFact::ParamToSql {
                endpoint: e,
                param,
                stmt,
                position,
            } if e == id => {
                let Some(parsed) = endpoint.stmt(stmt) else {
                    continue;
                };
                let col = position.column();
                let (Some(op), Some(kind)) = (
                    sql_op(&parsed.body, position),
                    schema.resource_kind(&col.table, &col.column),
                ) else {
                    continue;
                };
                points.insert(InjectionPoint {
                    endpoint: id.to_string(),
                    param: param.clone(),
                    kind,
                    stmt: stmt.clone(),
                    sql_op: op,
                });
            }
            _ => {}
        }
    }

    let role = match (produced.is_empty(), points.is_empty()) {
        (true, true) => Role::Neither,
        (false, true) => Role::Producer,
        (true, false) => Role::Consumer,
        (false, false) => {
            let consumed_only = produced
                .iter()
                .all(|p| points.iter().any(|ip| ip.kind.same_domain(&p.kind)));
            if consumed_only {
                Role::FalseProducer
            } else {
                Role::ProducerConsumer
            }
        }
    };
    Classification {
        endpoint: id.to_string(),
        role,
        produced: produced.into_iter().collect(),
        injection_points: points.into_iter().collect(),
    }
}

/// Classifications of every non-administrator endpoint, in app order.
pub fn classify_all(model: &AppModel, facts: &[FlowFact]) -> Vec<Classification> {
    model
        .analyzed_endpoints()
        .map(|e| classify_endpoint(e, facts, model.schema()))
        .collect()
}

/// All consumer-side injection points of the app, sorted.
pub fn injection_points(model: &AppModel, facts: &[FlowFact]) -> Vec<InjectionPoint> {
    let mut out: Vec<InjectionPoint> = classify_all(model, facts)
        .into_iter()
        .flat_map(|c| c.injection_points)
        .collect();
    out.sort();
    out.dedup();
    out
}
