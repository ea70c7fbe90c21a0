use std::collections::{BTreeMap, BTreeSet};

use super::{FlowFact, SqlPosition};
use crate::app::{AppModel, EndpointModel, Expr, HandlerStmt};
use crate::sql::{ColumnRef, SqlBody, SqlStmt, ValueSource};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Label {
    Param(String),
    Token(String),
    /// One output column of a statement.
    Column {
        stmt: String,
        output: String,
    },
    /// The whole row set of a statement.
    Rows(String),
    Constant,
}

type Labels = BTreeSet<Label>;

/// Param, token and SQL-output flows inside every endpoint handler.
pub fn server_flows(model: &AppModel) -> Vec<FlowFact> {
    let mut facts: Vec<FlowFact> = model.endpoints().iter().flat_map(endpoint_flows).collect();
    facts.sort();
    facts.dedup();
    facts
}

fn expr_labels(expr: &Expr, vars: &BTreeMap<&str, Labels>) -> Labels {
    match expr {
        Expr::Var(v) => vars.get(v.as_str()).cloned().unwrap_or_default(),
        Expr::Param(p) => [Label::Param(p.clone())].into(),
        Expr::TokenClaim(c) => [Label::Token(c.clone())].into(),
        Expr::Literal(_) => [Label::Constant].into(),
        Expr::SqlResult { stmt, column } => [Label::Column {
            stmt: stmt.clone(),
            output: column.clone(),
        }]
        .into(),
        // element-wise: a collection carries the taint of every member
        Expr::CollectionOf(items) => items.iter().flat_map(|i| expr_labels(i, vars)).collect(),
    }
}

/// Positions in `stmt` that read placeholder `name`.
fn positions(stmt: &SqlStmt, name: &str) -> Vec<SqlPosition> {
    let mut out = Vec::new();
    for c in stmt.where_conditions() {
        if c.placeholder.as_deref() == Some(name) {
            out.push(SqlPosition::WhereCondition(c.column.clone()));
        }
    }
    match &stmt.body {
        SqlBody::Insert(ins) => {
            for (col, op) in &ins.values {
                if op.placeholder.as_deref() == Some(name) {
                    out.push(SqlPosition::InsertValue(ColumnRef::new(&ins.table, col)));
                }
            }
        }
        SqlBody::Update(up) => {
            for (col, op) in &up.set {
                if op.placeholder.as_deref() == Some(name) {
                    out.push(SqlPosition::SetValue(ColumnRef::new(&up.table, col)));
                }
            }
        }
        _ => {}
    }
    out
}

/// Every (position, source) pair recorded directly in the parsed statement.
fn bound_positions(stmt: &SqlStmt) -> Vec<(SqlPosition, &ValueSource)> {
    let mut out: Vec<(SqlPosition, &ValueSource)> = stmt
        .where_conditions()
        .iter()
        .map(|c| (SqlPosition::WhereCondition(c.column.clone()), &c.value))
        .collect();
    match &stmt.body {
        SqlBody::Insert(ins) => {
            for (col, op) in &ins.values {
                out.push((
                    SqlPosition::InsertValue(ColumnRef::new(&ins.table, col)),
                    &op.value,
                ));
            }
        }
        SqlBody::Update(up) => {
            for (col, op) in &up.set {
                out.push((
                    SqlPosition::SetValue(ColumnRef::new(&up.table, col)),
                    &op.value,
                ));
            }
        }
        _ => {}
    }
    out
}

fn output_column(ep: &EndpointModel, stmt: &str, output: &str) -> Option<ColumnRef> {
    ep.stmt(stmt)?.as_select()?.output_column(output).cloned()
}

fn sink_fact(
    ep: &EndpointModel,
    label: &Label,
    stmt: &str,
    position: SqlPosition,
) -> Option<FlowFact> {
    let endpoint = ep.id().to_string();
    match label {
        Label::Param(param) => Some(FlowFact::ParamToSql {
            endpoint,
            param: param.clone(),
            stmt: stmt.to_string(),
            position,
        }),
        Label::Token(claim) => Some(FlowFact::TokenToSql {
            endpoint,
            claim: claim.clone(),
            stmt: stmt.to_string(),
            position,
        }),
        Label::Column { stmt: from, output } => Some(FlowFact::SqlToSql {
            endpoint,
            from_stmt: from.clone(),
            from_column: output_column(ep, from, output)?,
            to_stmt: stmt.to_string(),
            to_position: position,
        }),
        Label::Rows(_) | Label::Constant => None,
    }
}

fn endpoint_flows(ep: &EndpointModel) -> Vec<FlowFact> {
    let mut facts = Vec::new();

    // Sources the statements were parsed with, including explicit bindings
    // of statements the handler never runs.
    for stmt in &ep.sql {
        for (position, source) in bound_positions(stmt) {
            let label = match source {
                ValueSource::Param { name, .. } => Label::Param(name.clone()),
                ValueSource::TokenDerived { claim } => Label::Token(claim.clone()),
                ValueSource::SqlOutput { stmt, column } => Label::Column {
                    stmt: stmt.clone(),
                    output: column.clone(),
                },
                _ => continue,
            };
            facts.extend(sink_fact(ep, &label, &stmt.id, position));
        }
    }

    // Handlers are straight-line SSA, so a single forward pass reaches the
    // fixpoint: every use is preceded by its only definition.
    let mut vars: BTreeMap<&str, Labels> = BTreeMap::new();
    for h in &ep.handler {
        match h {
            HandlerStmt::ExecSql { stmt, args, .. } => {
                if let Some(parsed) = ep.stmt(stmt) {
                    for (name, expr) in args {
                        for label in expr_labels(expr, &vars) {
                            for position in positions(parsed, name) {
                                facts.extend(sink_fact(ep, &label, stmt, position));
                            }
                        }
                    }
                }
            }
            HandlerStmt::Return { fields } => {
                for (field, expr) in fields {
                    for label in expr_labels(expr, &vars) {
                        if let Label::Column { stmt, output } = label {
                            if let Some(column) = output_column(ep, &stmt, &output) {
                                facts.push(FlowFact::SqlToReturn {
                                    endpoint: ep.id().to_string(),
                                    stmt,
                                    column,
                                    return_field: field.clone(),
                                });
                            }
                        }
                    }
                }
            }
            _ => {}
        }
        define(h, &mut vars);
    }
    facts
}

/// Records the labels of whatever `h` defines.
fn define<'a>(h: &'a HandlerStmt, vars: &mut BTreeMap<&'a str, Labels>) {
    match h {
        HandlerStmt::Assign { dst, src } => {
            let labels = expr_labels(src, vars);
            vars.insert(dst, labels);
        }
        HandlerStmt::Project { dst, src, field } => {
            let projected = vars
                .get(src.as_str())
                .into_iter()
                .flatten()
                .map(|l| match l {
                    Label::Rows(stmt) => Label::Column {
                        stmt: stmt.clone(),
                        output: field.clone(),
                    },
                    other => other.clone(),
                })
                .collect();
            vars.insert(dst, projected);
        }
        HandlerStmt::ExecSql {
            stmt,
            dst: Some(dst),
            ..
        } => {
            vars.insert(dst, [Label::Rows(stmt.clone())].into());
        }
        _ => {}
    }
}

/// Whether every value of return field `field` comes from SQL output
/// columns (no parameter, claim or literal mixed in).
pub fn field_is_sql_only(ep: &EndpointModel, field: &str) -> bool {
    let mut vars: BTreeMap<&str, Labels> = BTreeMap::new();
    let mut result = None;
    for h in &ep.handler {
        if let HandlerStmt::Return { fields } = h {
            if let Some(expr) = fields.get(field) {
                let labels = expr_labels(expr, &vars);
                let pure =
                    !labels.is_empty() && labels.iter().all(|l| matches!(l, Label::Column { .. }));
                result = Some(result.unwrap_or(true) && pure);
            }
        }
        define(h, &mut vars);
    }
    result.unwrap_or(false)
}
