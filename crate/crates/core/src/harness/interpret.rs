use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::app::{AppModel, EndpointModel, Expr, HandlerStmt};
use crate::runtime::UserContext;
use crate::sql::{
    ColumnRef, Condition, Literal, Operand, PageBound, Projection, Scalar, Select, SqlBody,
    SqlStmt, ValueSource,
};
use crate::store::{Predicate, Query, ResourceStore, Row, WriteOp};

/// What one executed statement did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StmtOutcome {
    pub stmt: String,
    pub op: String,
    /// Rows returned by a SELECT.
    pub rows: usize,
    /// Rows written by INSERT, UPDATE or DELETE.
    pub affected: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    /// Return fields; scalars and collections alike become value lists.
    pub fields: BTreeMap<String, Vec<Scalar>>,
    pub statements: Vec<StmtOutcome>,
}

impl Response {
    pub fn outcome(&self, stmt: &str) -> Option<&StmtOutcome> {
        self.statements.iter().find(|s| s.stmt == stmt)
    }

    /// Whether any return field carries `value`.
    pub fn exposes(&self, value: &Scalar) -> bool {
        self.fields.values().any(|vs| vs.contains(value))
    }
}

#[derive(Debug, Clone)]
enum Value {
    List(Vec<Scalar>),
    Rows {
        columns: Vec<String>,
        rows: Vec<Vec<Option<Scalar>>>,
    },
}

impl Value {
    fn scalars(self, what: &str) -> Result<Vec<Scalar>, HarnessError> {
        match self {
            Value::List(v) => Ok(v),
            Value::Rows { .. } => Err(HarnessError::Type(format!(
                "{what} is a row set, not a value"
            ))),
        }
    }

    fn column(&self, name: &str) -> Option<Vec<Scalar>> {
        match self {
            Value::Rows { columns, rows } => {
                let i = columns.iter().position(|c| c == name)?;
                Some(rows.iter().filter_map(|r| r[i].clone()).collect())
            }
            Value::List(_) => None,
        }
    }
}

struct Frame<'a> {
    ep: &'a EndpointModel,
    user: &'a UserContext,
    args: &'a BTreeMap<String, Literal>,
    vars: BTreeMap<String, Value>,
    results: BTreeMap<String, Value>,
}

impl Frame<'_> {
    fn claim(&self, claim: &str) -> Result<Scalar, HarnessError> {
        self.user
            .claims
            .get(claim)
            .cloned()
            .ok_or_else(|| HarnessError::MissingClaim(claim.to_string()))
    }

    fn param(&self, name: &str) -> Result<Vec<Scalar>, HarnessError> {
        self.args
            .get(name)
            .map(Literal::values)
            .ok_or_else(|| HarnessError::MissingArg {
                endpoint: self.ep.id().to_string(),
                param: name.to_string(),
            })
    }

    fn result_column(&self, stmt: &str, column: &str) -> Result<Vec<Scalar>, HarnessError> {
        self.results
            .get(stmt)
            .and_then(|v| v.column(column))
            .ok_or_else(|| HarnessError::Type(format!("no output `{column}` of `{stmt}`")))
    }

    fn eval(&self, expr: &Expr) -> Result<Value, HarnessError> {
        Ok(match expr {
            Expr::Var(v) => self
                .vars
                .get(v)
                .cloned()
                .ok_or_else(|| HarnessError::Type(format!("undefined variable `{v}`")))?,
            Expr::Param(p) => Value::List(self.param(p)?),
            Expr::TokenClaim(c) => Value::List(vec![self.claim(c)?]),
            Expr::Literal(l) => Value::List(l.values()),
            Expr::SqlResult { stmt, column } => Value::List(self.result_column(stmt, column)?),
            Expr::CollectionOf(items) => {
                let mut out = Vec::new();
                for i in items {
                    out.extend(self.eval(i)?.scalars("collection member")?);
                }
                Value::List(out)
            }
        })
    }

    /// Values of a placeholder: the handler's argument if it passed one,
    /// otherwise the statement's own binding.
    fn bind(
        &self,
        placeholder: Option<&str>,
        source: &ValueSource,
        call_args: &BTreeMap<String, Vec<Scalar>>,
    ) -> Result<Vec<Scalar>, HarnessError> {
        if let Some(v) = placeholder.and_then(|p| call_args.get(p)) {
            return Ok(v.clone());
        }
        match source {
            ValueSource::Constant(l) => Ok(l.values()),
            ValueSource::Param { name, .. } => self.param(name),
            ValueSource::TokenDerived { claim } => Ok(vec![self.claim(claim)?]),
            ValueSource::SqlOutput { stmt, column } => self.result_column(stmt, column),
            ValueSource::Unbound | ValueSource::IntervalRef { .. } => {
                Err(HarnessError::MissingArg {
                    endpoint: self.ep.id().to_string(),
                    param: placeholder.unwrap_or("?").to_string(),
                })
            }
        }
    }

    fn predicates(
        &self,
        conds: &[Condition],
        call_args: &BTreeMap<String, Vec<Scalar>>,
    ) -> Result<Vec<Predicate>, HarnessError> {
        conds
            .iter()
            .map(|c| {
                let values = self.bind(c.placeholder.as_deref(), &c.value, call_args)?;
                Ok(Predicate::new(c.column.clone(), c.op, values))
            })
            .collect()
    }

    fn row(
        &self,
        values: &BTreeMap<String, Operand>,
        call_args: &BTreeMap<String, Vec<Scalar>>,
    ) -> Result<Row, HarnessError> {
        let mut row = Row::new();
        for (col, op) in values {
            let mut v = self.bind(op.placeholder.as_deref(), &op.value, call_args)?;
            if v.len() != 1 {
                return Err(HarnessError::Type(format!(
                    "column `{col}` needs exactly one value"
                )));
            }
            row.insert(col.clone(), v.remove(0));
        }
        Ok(row)
    }

    fn bound(&self, b: &PageBound, call_args: &BTreeMap<String, Vec<Scalar>>) -> Option<usize> {
        let v = match b {
            PageBound::Literal(n) => *n,
            PageBound::Placeholder(p) => call_args.get(p)?.first()?.as_int()?,
        };
        usize::try_from(v).ok()
    }

    fn select(
        &self,
        s: &Select,
        call_args: &BTreeMap<String, Vec<Scalar>>,
        store: &dyn ResourceStore,
    ) -> Result<Value, HarnessError> {
        let filter = vec![self.predicates(&s.where_, call_args)?];
        let columns: Vec<String> = s
            .projections
            .iter()
            .map(|p| p.output_name().to_string())
            .collect();
        let aggregated = s
            .projections
            .iter()
            .any(|p| matches!(p, Projection::Aggregate { .. }));
        // read every plain column plus every aggregate argument
        let mut output: Vec<ColumnRef> = Vec::new();
        let mut slot = Vec::new();
        for p in &s.projections {
            let col = match p {
                Projection::Column { column, .. } => Some(column.clone()),
                Projection::Aggregate { expr, .. } => aggregate_arg(expr),
            };
            slot.push(col.map(|c| {
                output.push(c);
                output.len() - 1
            }));
        }
        if output.is_empty() {
            // COUNT(*) alone: read any column so rows can be counted
            output.push(ColumnRef::new(
                &s.tables[0],
                first_column(store, &s.tables[0])?,
            ));
        }
        let mut query =
            Query::new(s.tables.clone(), s.join_conditions.clone(), output).with_filter(filter);
        if !aggregated {
            if let Some(p) = &s.pagination {
                query.limit = self.bound(&p.limit, call_args);
                query.offset = p.offset.as_ref().and_then(|o| self.bound(o, call_args));
            }
        }
        let raw = store.select(&query)?;
        let rows = if aggregated {
            let row = s
                .projections
                .iter()
                .zip(&slot)
                .map(|(p, i)| match p {
                    Projection::Aggregate { expr, .. } => aggregate(expr, &raw, *i),
                    Projection::Column { .. } => raw
                        .first()
                        .and_then(|r| r[i.expect("plain column")].clone()),
                })
                .collect();
            vec![row]
        } else {
            raw.into_iter()
                .map(|r| {
                    slot.iter()
                        .map(|i| r[i.expect("plain column")].clone())
                        .collect()
                })
                .collect()
        };
        Ok(Value::Rows { columns, rows })
    }

    fn exec(
        &mut self,
        stmt: &SqlStmt,
        args: &BTreeMap<String, Expr>,
        store: &dyn ResourceStore,
    ) -> Result<(Value, StmtOutcome), HarnessError> {
        let mut call_args = BTreeMap::new();
        for (name, e) in args {
            call_args.insert(name.clone(), self.eval(e)?.scalars(name)?);
        }
        let mut outcome = StmtOutcome {
            stmt: stmt.id.clone(),
            op: stmt.kind_name().to_string(),
            rows: 0,
            affected: 0,
        };
        let value = match &stmt.body {
            SqlBody::Select(s) => {
                let v = self.select(s, &call_args, store)?;
                if let Value::Rows { rows, .. } = &v {
                    outcome.rows = rows.len();
                }
                v
            }
            SqlBody::Insert(ins) => {
                let mut row = self.row(&ins.values, &call_args)?;
                let out = store.apply(&WriteOp::Insert {
                    table: ins.table.clone(),
                    values: row.clone(),
                })?;
                outcome.affected = out.affected;
                if let (Some(k), Some(t)) = (out.inserted_key, store.schema().table(&ins.table)) {
                    row.insert(t.primary_key.clone(), k);
                }
                let columns: Vec<String> = row.keys().cloned().collect();
                Value::Rows {
                    rows: vec![row.into_values().map(Some).collect()],
                    columns,
                }
            }
            SqlBody::Update(up) => {
                let set = self.row(&up.set, &call_args)?;
                let filter = self.predicates(&up.where_, &call_args)?;
                let out = store.apply(&WriteOp::Update {
                    table: up.table.clone(),
                    set,
                    filter,
                })?;
                outcome.affected = out.affected;
                Value::Rows {
                    columns: Vec::new(),
                    rows: Vec::new(),
                }
            }
            SqlBody::Delete(d) => {
                let filter = self.predicates(&d.where_, &call_args)?;
                let out = store.apply(&WriteOp::Delete {
                    table: d.table.clone(),
                    filter,
                })?;
                outcome.affected = out.affected;
                Value::Rows {
                    columns: Vec::new(),
                    rows: Vec::new(),
                }
            }
        };
        Ok((value, outcome))
    }
}

fn first_column(store: &dyn ResourceStore, table: &str) -> Result<String, HarnessError> {
    store
        .schema()
        .table(table)
        .map(|t| t.primary_key.clone())
        .ok_or_else(|| HarnessError::Type(format!("unknown table `{table}`")))
}

/// `SUM(t.c)` -> `t.c`; `COUNT(*)` -> none.
fn aggregate_arg(expr: &str) -> Option<ColumnRef> {
    let inner = expr.split_once('(')?.1.strip_suffix(')')?;
    let (t, c) = inner.split_once('.')?;
    Some(ColumnRef::new(t, c))
}

fn aggregate(expr: &str, rows: &[Vec<Option<Scalar>>], slot: Option<usize>) -> Option<Scalar> {
    let func = expr.split('(').next().unwrap_or_default();
    let Some(i) = slot else {
        return Some(Scalar::Int(rows.len() as i64));
    };
    let values: Vec<&Scalar> = rows.iter().filter_map(|r| r[i].as_ref()).collect();
    let ints = || values.iter().filter_map(|v| v.as_int());
    match func {
        "COUNT" => Some(Scalar::Int(values.len() as i64)),
        "SUM" => Some(Scalar::Int(ints().sum())),
        "AVG" => {
            let n = ints().count() as i64;
            (n > 0).then(|| Scalar::Int(ints().sum::<i64>() / n))
        }
        "MIN" => values.iter().min().map(|v| (*v).clone()),
        "MAX" => values.iter().max().map(|v| (*v).clone()),
        _ => None,
    }
}

/// Runs one endpoint handler for `user` with no authorization applied.
pub fn interpret(
    model: &AppModel,
    endpoint: &str,
    user: &UserContext,
    args: &BTreeMap<String, Literal>,
    store: &dyn ResourceStore,
) -> Result<Response, HarnessError> {
    let ep = model
        .endpoint(endpoint)
        .ok_or_else(|| HarnessError::UnknownEndpoint(endpoint.to_string()))?;
    for p in &ep.endpoint.params {
        if !args.contains_key(&p.name) {
            return Err(HarnessError::MissingArg {
                endpoint: endpoint.to_string(),
                param: p.name.clone(),
            });
        }
    }
    if ep.endpoint.token_required && user.claims.is_empty() {
        return Err(HarnessError::Unauthenticated(endpoint.to_string()));
    }
    let mut frame = Frame {
        ep,
        user,
        args,
        vars: BTreeMap::new(),
        results: BTreeMap::new(),
    };
    let mut response = Response::default();
    for h in &ep.handler {
        match h {
            HandlerStmt::Assign { dst, src } => {
                let v = frame.eval(src)?;
                frame.vars.insert(dst.clone(), v);
            }
            HandlerStmt::Project { dst, src, field } => {
                let v = frame
                    .vars
                    .get(src)
                    .and_then(|v| v.column(field))
                    .ok_or_else(|| {
                        HarnessError::Type(format!("`{src}` has no column `{field}`"))
                    })?;
                frame.vars.insert(dst.clone(), Value::List(v));
            }
            HandlerStmt::ExecSql { stmt, args, dst } => {
                let parsed = ep
                    .stmt(stmt)
                    .ok_or_else(|| HarnessError::Type(format!("unknown statement `{stmt}`")))?;
                let (value, outcome) = frame.exec(parsed, args, store)?;
                response.statements.push(outcome);
                if let Some(dst) = dst {
                    frame.vars.insert(dst.clone(), value.clone());
                }
                frame.results.insert(stmt.clone(), value);
            }
            HandlerStmt::Return { fields } => {
                for (name, e) in fields {
                    let v = frame.eval(e)?.scalars(name)?;
                    response.fields.insert(name.clone(), v);
                }
            }
        }
    }
    Ok(response)
}
