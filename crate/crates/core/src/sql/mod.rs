//! Restricted SQL model: statements whose operands are annotated with where
//! their values come from, plus the reduction and merge rules that turn
//! producer SELECTs into authorization intervals.

mod lexer;
mod merge;
mod parser;
mod reduce;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::schema::{ResourceIdKind, ScalarKind};

pub use merge::{merge_subset, merge_union, normalized_conditions, ConditionKey};
pub use parser::{parse_sql, placeholders};
pub use reduce::{covers_full_table, projected_resource_ids, reduce_select};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SqlError {
    #[error("SQL parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("placeholder `:{0}` has no binding")]
    UnboundPlaceholder(String),
    #[error("unsupported construct: {0}")]
    UnsupportedConstruct(String),
    #[error("statement projects no resource-ID column")]
    NotAProducer,
    #[error("dependencies of the interval are not resolved")]
    DependenciesUnresolved,
    #[error("statements do not produce the same resource ID: {0}")]
    KindMismatch(String),
}

/// A column qualified by its table. Serialized as `table.column`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        ColumnRef {
            table: table.into(),
            column: column.into(),
        }
    }

    pub fn of_kind(kind: &ResourceIdKind) -> Self {
        ColumnRef::new(&kind.table, &kind.column)
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

impl FromStr for ColumnRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('.') {
            Some((t, c)) if !t.is_empty() && !c.is_empty() && !c.contains('.') => {
                Ok(ColumnRef::new(t, c))
            }
            _ => Err(format!("expected `table.column`, got `{s}`")),
        }
    }
}

impl Serialize for ColumnRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ColumnRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A single stored value. Comparison is type-aware: an integer never equals
/// a string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Int(i64),
    Str(String),
}

impl Scalar {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Scalar::Int(v) => Some(*v),
            Scalar::Str(_) => None,
        }
    }

    /// Whether the value fits a column of the given type; untyped columns
    /// accept anything.
    pub fn fits(&self, kind: Option<ScalarKind>) -> bool {
        !matches!(
            (kind, self),
            (Some(ScalarKind::Integer), Scalar::Str(_))
                | (Some(ScalarKind::String), Scalar::Int(_))
        )
    }

    /// Converts a JSON value into scalars; arrays flatten one level.
    pub fn from_json(value: &serde_json::Value) -> Option<Vec<Scalar>> {
        match value {
            serde_json::Value::Number(n) => n.as_i64().map(|v| vec![Scalar::Int(v)]),
            serde_json::Value::String(s) => Some(vec![Scalar::Str(s.clone())]),
            serde_json::Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    serde_json::Value::Number(n) => n.as_i64().map(Scalar::Int),
                    serde_json::Value::String(s) => Some(Scalar::Str(s.clone())),
                    _ => None,
                })
                .collect(),
            _ => None,
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Int(v) => write!(f, "{v}"),
            Scalar::Str(s) => write!(f, "'{s}'"),
        }
    }
}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(v)
    }
}

impl From<&str> for Scalar {
    fn from(v: &str) -> Self {
        Scalar::Str(v.to_string())
    }
}

/// A constant operand in SQL text: a scalar or a parenthesized list.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Scalar(Scalar),
    List(Vec<Scalar>),
}

impl Literal {
    pub fn values(&self) -> Vec<Scalar> {
        match self {
            Literal::Scalar(s) => vec![s.clone()],
            Literal::List(items) => items.clone(),
        }
    }

    /// Sorted, deduplicated form used for syntactic comparison.
    pub fn canonical(&self) -> Literal {
        match self {
            Literal::Scalar(s) => Literal::Scalar(s.clone()),
            Literal::List(items) => {
                let mut items = items.clone();
                items.sort();
                items.dedup();
                if items.len() == 1 {
                    Literal::Scalar(items.remove(0))
                } else {
                    Literal::List(items)
                }
            }
        }
    }
}

/// Where the value of an SQL operand comes from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    Constant(Literal),
    Param {
        endpoint: String,
        name: String,
    },
    TokenDerived {
        claim: String,
    },
    /// Output column (by output name) of an earlier statement of the same
    /// handler.
    SqlOutput {
        stmt: String,
        column: String,
    },
    Unbound,
    /// Membership in the union of the named intervals. Produced only by
    /// dependence resolution; never parsed.
    IntervalRef {
        intervals: Vec<String>,
    },
}

impl ValueSource {
    pub fn is_user_input(&self) -> bool {
        matches!(self, ValueSource::Param { .. } | ValueSource::Unbound)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CompareOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "IN")]
    In,
    #[serde(rename = "<>")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "LIKE")]
    Like,
}

impl CompareOp {
    /// `=` and `IN` both mean "equals one of the bound values".
    pub fn is_membership(self) -> bool {
        matches!(self, CompareOp::Eq | CompareOp::In)
    }
}

impl fmt::Display for CompareOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CompareOp::Eq => "=",
            CompareOp::In => "IN",
            CompareOp::Ne => "<>",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
            CompareOp::Like => "LIKE",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub column: ColumnRef,
    pub op: CompareOp,
    pub value: ValueSource,
    /// Placeholder name in the source text, kept so the statement can be
    /// executed with concrete arguments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placeholder: Option<String>,
}

impl Condition {
    pub fn new(column: ColumnRef, op: CompareOp, value: ValueSource) -> Self {
        Condition {
            column,
            op,
            value,
            placeholder: None,
        }
    }
}

/// Value written by INSERT or UPDATE ... SET.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operand {
    pub value: ValueSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placeholder: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JoinCondition {
    pub left: ColumnRef,
    pub right: ColumnRef,
}

impl JoinCondition {
    /// Orders the two sides so that `a = b` and `b = a` compare equal.
    pub fn normalized(&self) -> JoinCondition {
        if self.left <= self.right {
            self.clone()
        } else {
            JoinCondition {
                left: self.right.clone(),
                right: self.left.clone(),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    Column {
        column: ColumnRef,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alias: Option<String>,
    },
    /// Aggregate output such as `COUNT(*)`; never a resource ID.
    Aggregate { expr: String, alias: Option<String> },
}

impl Projection {
    /// Name under which the projection appears in a result row.
    pub fn output_name(&self) -> &str {
        match self {
            Projection::Column { column, alias } => alias.as_deref().unwrap_or(&column.column),
            Projection::Aggregate { expr, alias } => alias.as_deref().unwrap_or(expr),
        }
    }

    pub fn column(&self) -> Option<&ColumnRef> {
        match self {
            Projection::Column { column, .. } => Some(column),
            Projection::Aggregate { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageBound {
    Literal(i64),
    Placeholder(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pagination {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<PageBound>,
    pub limit: PageBound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Select {
    pub tables: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub join_conditions: Vec<JoinCondition>,
    pub projections: Vec<Projection>,
    #[serde(rename = "where")]
    pub where_: Vec<Condition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pagination: Option<Pagination>,
}

impl Select {
    pub fn has_pagination(&self) -> bool {
        self.pagination.is_some()
    }

    pub fn is_single_table(&self) -> bool {
        self.tables.len() == 1
    }

    /// Column behind an output name, if the output is a plain column.
    pub fn output_column(&self, output: &str) -> Option<&ColumnRef> {
        self.projections
            .iter()
            .find(|p| p.output_name() == output)
            .and_then(Projection::column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Insert {
    pub table: String,
    pub values: BTreeMap<String, Operand>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Update {
    pub table: String,
    pub set: BTreeMap<String, Operand>,
    #[serde(rename = "where")]
    pub where_: Vec<Condition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delete {
    pub table: String,
    #[serde(rename = "where")]
    pub where_: Vec<Condition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqlBody {
    Select(Select),
    Insert(Insert),
    Update(Update),
    Delete(Delete),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlStmt {
    pub id: String,
    #[serde(flatten)]
    pub body: SqlBody,
}

impl SqlStmt {
    pub fn as_select(&self) -> Option<&Select> {
        match &self.body {
            SqlBody::Select(s) => Some(s),
            _ => None,
        }
    }

    pub fn where_conditions(&self) -> &[Condition] {
        match &self.body {
            SqlBody::Select(s) => &s.where_,
            SqlBody::Update(u) => &u.where_,
            SqlBody::Delete(d) => &d.where_,
            SqlBody::Insert(_) => &[],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match &self.body {
            SqlBody::Select(_) => "SELECT",
            SqlBody::Insert(_) => "INSERT",
            SqlBody::Update(_) => "UPDATE",
            SqlBody::Delete(_) => "DELETE",
        }
    }
}

/// A producer SELECT with user-narrowing conditions removed.
///
/// Membership is the disjunction of `retained` and every entry of
/// `alternatives`; a freshly reduced select has no alternatives, they only
/// appear when two intervals are merged by union.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReducedSelect {
    pub base: Select,
    pub retained: Vec<Condition>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<Vec<Condition>>,
    pub resource_ids: Vec<ResourceIdKind>,
}

impl ReducedSelect {
    pub fn disjuncts(&self) -> impl Iterator<Item = &[Condition]> {
        std::iter::once(self.retained.as_slice()).chain(self.alternatives.iter().map(Vec::as_slice))
    }

    pub fn disjuncts_mut(&mut self) -> impl Iterator<Item = &mut Vec<Condition>> {
        std::iter::once(&mut self.retained).chain(self.alternatives.iter_mut())
    }

    pub fn produces(&self, kind: &ResourceIdKind) -> bool {
        self.resource_ids.contains(kind)
    }

    pub fn is_single_table(&self) -> bool {
        self.base.is_single_table()
    }
}
