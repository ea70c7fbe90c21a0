//! Flow facts over an app model: how parameters, token claims and SQL
//! outputs reach SQL positions and returns, and how returned IDs travel
//! through frontend pages into other endpoints' parameters.

mod frontend;
mod server;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::{AppModel, HandlerStmt};
use crate::sql::{ColumnRef, SqlBody};

pub use frontend::frontend_flows;
pub use server::{field_is_sql_only, server_flows};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaintError {
    #[error("facts line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("fact does not resolve against the app: {0}")]
    Unresolved(String),
}

/// Where a value lands inside a statement.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqlPosition {
    WhereCondition(ColumnRef),
    InsertValue(ColumnRef),
    SetValue(ColumnRef),
}

impl SqlPosition {
    pub fn column(&self) -> &ColumnRef {
        match self {
            SqlPosition::WhereCondition(c)
            | SqlPosition::InsertValue(c)
            | SqlPosition::SetValue(c) => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PatternKind {
    P2C,
    P2Event2C,
    P2Router,
    P2Event2Router,
    Router2PC,
    Router2C,
}

impl PatternKind {
    pub fn is_router_entry(self) -> bool {
        matches!(self, PatternKind::P2Router | PatternKind::P2Event2Router)
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "fact", rename_all = "snake_case")]
pub enum FlowFact {
    ParamToSql {
        endpoint: String,
        param: String,
        stmt: String,
        position: SqlPosition,
    },
    TokenToSql {
        endpoint: String,
        claim: String,
        stmt: String,
        position: SqlPosition,
    },
    SqlToReturn {
        endpoint: String,
        stmt: String,
        column: ColumnRef,
        return_field: String,
    },
    SqlToSql {
        endpoint: String,
        from_stmt: String,
        from_column: ColumnRef,
        to_stmt: String,
        to_position: SqlPosition,
    },
    /// A producer's return field reaching a consumer's parameter in the
    /// frontend. Cross-page edges list the patterns of every hop in order.
    FrontendEdge {
        producer_endpoint: String,
        return_field: String,
        consumer_endpoint: String,
        param: String,
        patterns: Vec<PatternKind>,
        path: Vec<String>,
    },
}

/// Union of server and frontend facts, sorted and deduplicated.
pub fn all_facts(model: &AppModel) -> Vec<FlowFact> {
    let server = server_flows(model);
    let mut facts = frontend_flows(model, &server);
    facts.extend(server);
    normalize_facts(facts)
}

/// Sorts facts and drops duplicates. Frontend edges that differ only in
/// their path collapse to the one with the smallest path.
pub fn normalize_facts(mut facts: Vec<FlowFact>) -> Vec<FlowFact> {
    facts.sort();
    facts.dedup_by(|b, a| match (a, b) {
        (
            FlowFact::FrontendEdge {
                producer_endpoint: p1,
                return_field: f1,
                consumer_endpoint: c1,
                param: q1,
                patterns: k1,
                ..
            },
            FlowFact::FrontendEdge {
                producer_endpoint: p2,
                return_field: f2,
                consumer_endpoint: c2,
                param: q2,
                patterns: k2,
                ..
            },
        ) => p1 == p2 && f1 == f2 && c1 == c2 && q1 == q2 && k1 == k2,
        (a, b) => a == b,
    });
    facts
}

/// One fact per line, fields in declaration order.
pub fn facts_to_jsonl(facts: &[FlowFact]) -> String {
    let mut out = String::new();
    for f in facts {
        out.push_str(&serde_json::to_string(f).expect("facts serialize"));
        out.push('\n');
    }
    out
}

pub fn facts_from_jsonl(text: &str) -> Result<Vec<FlowFact>, TaintError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TaintError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Checks that externally supplied facts name real endpoints, params,
/// statements, columns and return fields.
pub fn check_facts(model: &AppModel, facts: &[FlowFact]) -> Result<(), TaintError> {
    let unresolved = |msg: String| Err(TaintError::Unresolved(msg));
    let column_ok = |c: &ColumnRef| model.schema().has_column(&c.table, &c.column);
    let stmt_ok = |ep: &str, stmt: &str| model.endpoint(ep).and_then(|e| e.stmt(stmt)).is_some();
    let returns = |ep: &str, field: &str| {
        model.endpoint(ep).is_some_and(|e| {
            e.handler
                .iter()
                .any(|h| matches!(h, HandlerStmt::Return { fields } if fields.contains_key(field)))
        })
    };
    for f in facts {
        match f {
            FlowFact::ParamToSql {
                endpoint,
                param,
                stmt,
                position,
            } => {
                let has_param = model
                    .endpoint(endpoint)
                    .is_some_and(|e| e.endpoint.param(param).is_some());
                if !has_param || !stmt_ok(endpoint, stmt) || !column_ok(position.column()) {
                    return unresolved(format!("{f:?}"));
                }
            }
            FlowFact::TokenToSql {
                endpoint,
                claim,
                stmt,
                position,
            } => {
                let has_claim = model.token_claims().iter().any(|c| &c.claim == claim);
                if !has_claim || !stmt_ok(endpoint, stmt) || !column_ok(position.column()) {
                    return unresolved(format!("{f:?}"));
                }
            }
            FlowFact::SqlToReturn {
                endpoint,
                stmt,
                column,
                return_field,
            } => {
                let is_select = model
                    .endpoint(endpoint)
                    .and_then(|e| e.stmt(stmt))
                    .is_some_and(|s| matches!(s.body, SqlBody::Select(_)));
                if !is_select || !column_ok(column) || !returns(endpoint, return_field) {
                    return unresolved(format!("{f:?}"));
                }
            }
            FlowFact::SqlToSql {
                endpoint,
                from_stmt,
                from_column,
                to_stmt,
                to_position,
            } => {
                if !stmt_ok(endpoint, from_stmt)
                    || !stmt_ok(endpoint, to_stmt)
                    || !column_ok(from_column)
                    || !column_ok(to_position.column())
                {
                    return unresolved(format!("{f:?}"));
                }
            }
            FlowFact::FrontendEdge {
                producer_endpoint,
                return_field,
                consumer_endpoint,
                param,
                patterns,
                ..
            } => {
                let has_param = model
                    .endpoint(consumer_endpoint)
                    .is_some_and(|e| e.endpoint.param(param).is_some());
                if !returns(producer_endpoint, return_field) || !has_param || patterns.is_empty() {
                    return unresolved(format!("{f:?}"));
                }
            }
        }
    }
    Ok(())
}
