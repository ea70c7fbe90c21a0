//! Recursive-descent parser for the restricted statement grammar.
//!
//! ```text
//! select := SELECT [DISTINCT] proj {, proj} FROM table {(, table) | ([INNER] JOIN table ON col = col {AND col = col})}
//!           [WHERE pred {AND pred}] [ORDER BY col [ASC|DESC] {, ...}] [LIMIT bound [(, bound) | OFFSET bound]]
//! insert := INSERT INTO table (col {, col}) VALUES (operand {, operand})
//! update := UPDATE table SET col = operand {, col = operand} [WHERE ...]
//! delete := DELETE FROM table [WHERE ...]
//! pred   := col op operand | col IN (operand {, operand}) | col [NOT] LIKE operand | col = col
//! ```
//!
//! Disjunctions, subqueries, grouping and outer joins are rejected.

use std::collections::{BTreeMap, BTreeSet};

use super::lexer::{tokenize, Tok, Token};
use super::{
    ColumnRef, CompareOp, Condition, Delete, Insert, JoinCondition, Literal, Operand, PageBound,
    Pagination, Projection, Scalar, Select, SqlBody, SqlError, SqlStmt, Update, ValueSource,
};
use crate::schema::Schema;

const AGGREGATES: &[&str] = &["COUNT", "SUM", "AVG", "MIN", "MAX"];
const RESERVED: &[&str] = &[
    "SELECT", "FROM", "WHERE", "AND", "OR", "NOT", "IN", "LIKE", "JOIN", "INNER", "LEFT", "RIGHT",
    "OUTER", "ON", "ORDER", "BY", "GROUP", "HAVING", "LIMIT", "OFFSET", "AS", "INSERT", "INTO",
    "VALUES", "UPDATE", "SET", "DELETE", "ASC", "DESC", "DISTINCT", "UNION", "FULL", "CROSS",
];

/// Parses one annotated statement. Every placeholder outside `LIMIT`/`OFFSET`
/// must have a binding.
pub fn parse_sql(
    id: &str,
    text: &str,
    schema: &Schema,
    bindings: &BTreeMap<String, ValueSource>,
) -> Result<SqlStmt, SqlError> {
    let tokens = tokenize(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        schema,
        bindings,
        scope: Vec::new(),
        end: text.len(),
    };
    let body = p.statement()?;
    Ok(SqlStmt {
        id: id.to_string(),
        body,
    })
}

/// Placeholders of a statement text: `(value placeholders, pagination placeholders)`.
pub fn placeholders(text: &str) -> Result<(BTreeSet<String>, BTreeSet<String>), SqlError> {
    let tokens = tokenize(text)?;
    let mut values = BTreeSet::new();
    let mut paging = BTreeSet::new();
    let mut in_paging = false;
    for t in &tokens {
        if t.is_keyword("LIMIT") || t.is_keyword("OFFSET") {
            in_paging = true;
        }
        if let Tok::Placeholder(name) = &t.tok {
            if in_paging {
                paging.insert(name.clone());
            } else {
                values.insert(name.clone());
            }
        }
    }
    Ok((values, paging))
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    schema: &'a Schema,
    bindings: &'a BTreeMap<String, ValueSource>,
    /// (alias, table) pairs in scope.
    scope: Vec<(String, String)>,
    end: usize,
}

enum Rhs {
    Column(ColumnRef),
    Value(ValueSource, Option<String>),
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |t| t.offset)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, SqlError> {
        Err(SqlError::Parse {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn at_keyword(&self, kw: &str) -> bool {
        self.peek().is_some_and(|t| t.is_keyword(kw))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.at_keyword(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), SqlError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            self.error(format!("expected {kw}"))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek().is_some_and(|t| &t.tok == tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &Tok, what: &str) -> Result<(), SqlError> {
        if self.eat(tok) {
            Ok(())
        } else {
            self.error(format!("expected {what}"))
        }
    }

    fn ident(&mut self) -> Result<String, SqlError> {
        match self.peek().map(|t| &t.tok) {
            Some(Tok::Ident(s)) if !is_reserved(s) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.error("expected identifier"),
        }
    }

    fn unsupported<T>(&self, what: &str) -> Result<T, SqlError> {
        Err(SqlError::UnsupportedConstruct(what.to_string()))
    }

    fn statement(&mut self) -> Result<SqlBody, SqlError> {
        let body = if self.eat_keyword("SELECT") {
            SqlBody::Select(self.select()?)
        } else if self.eat_keyword("INSERT") {
            SqlBody::Insert(self.insert()?)
        } else if self.eat_keyword("UPDATE") {
            SqlBody::Update(self.update()?)
        } else if self.eat_keyword("DELETE") {
            SqlBody::Delete(self.delete()?)
        } else {
            return self.error("expected SELECT, INSERT, UPDATE or DELETE");
        };
        self.eat(&Tok::Semi);
        if self.peek().is_some() {
            if self.at_keyword("UNION") {
                return self.unsupported("UNION");
            }
            return self.error("unexpected trailing input");
        }
        Ok(body)
    }

    fn table_name(&mut self) -> Result<String, SqlError> {
        if self.peek().is_some_and(|t| t.tok == Tok::LParen) {
            return self.unsupported("subquery in FROM");
        }
        let name = self.ident()?;
        if self.schema.table(&name).is_none() {
            return Err(SqlError::UnknownTable(name));
        }
        Ok(name)
    }

    fn table_ref(&mut self) -> Result<String, SqlError> {
        let table = self.table_name()?;
        let alias = if self.eat_keyword("AS")
            || matches!(self.peek().map(|t| &t.tok), Some(Tok::Ident(s)) if !is_reserved(s))
        {
            self.ident()?
        } else {
            table.clone()
        };
        if self.scope.iter().any(|(_, t)| *t == table) {
            return self.unsupported("the same table twice in one statement");
        }
        if self.scope.iter().any(|(a, _)| *a == alias) {
            return self.error(format!("duplicate alias `{alias}`"));
        }
        self.scope.push((alias, table.clone()));
        Ok(table)
    }

    fn column_ref(&mut self) -> Result<ColumnRef, SqlError> {
        let start = self.offset();
        let first = self.ident()?;
        if self.eat(&Tok::Dot) {
            let column = self.ident()?;
            let table = self
                .scope
                .iter()
                .find(|(a, _)| *a == first)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| SqlError::UnknownTable(first.clone()))?;
            if !self.schema.has_column(&table, &column) {
                return Err(SqlError::UnknownColumn(format!("{table}.{column}")));
            }
            return Ok(ColumnRef::new(table, column));
        }
        let owners: Vec<&String> = self
            .scope
            .iter()
            .map(|(_, t)| t)
            .filter(|t| self.schema.has_column(t, &first))
            .collect();
        match owners.as_slice() {
            [t] => Ok(ColumnRef::new(t.as_str(), first)),
            [] => Err(SqlError::UnknownColumn(first)),
            _ => Err(SqlError::Parse {
                offset: start,
                message: format!("ambiguous column `{first}`"),
            }),
        }
    }

    fn select(&mut self) -> Result<Select, SqlError> {
        self.eat_keyword("DISTINCT");
        // Projections reference tables that appear later, so collect them
        // first and resolve after FROM.
        let proj_start = self.pos;
        let mut depth = 0usize;
        while let Some(t) = self.peek() {
            match t.tok {
                Tok::LParen => depth += 1,
                Tok::RParen => depth = depth.saturating_sub(1),
                _ => {}
            }
            if depth == 0 && t.is_keyword("FROM") {
                break;
            }
            if t.is_keyword("SELECT") {
                return self.unsupported("subquery in projection");
            }
            self.pos += 1;
        }
        let proj_end = self.pos;
        if proj_end == proj_start {
            return self.error("expected projection list");
        }
        self.expect_keyword("FROM")?;

        let mut tables = vec![self.table_ref()?];
        let mut join_conditions = Vec::new();
        loop {
            if self.eat(&Tok::Comma) {
                tables.push(self.table_ref()?);
            } else if self.at_keyword("JOIN") || self.at_keyword("INNER") {
                self.eat_keyword("INNER");
                self.expect_keyword("JOIN")?;
                tables.push(self.table_ref()?);
                self.expect_keyword("ON")?;
                loop {
                    let left = self.column_ref()?;
                    if !self.eat(&Tok::Op("=")) {
                        return self.unsupported("non-equality join condition");
                    }
                    let right = self.column_ref()?;
                    join_conditions.push(JoinCondition { left, right }.normalized());
                    if !self.eat_keyword("AND") {
                        break;
                    }
                }
            } else if ["LEFT", "RIGHT", "FULL", "OUTER", "CROSS"]
                .iter()
                .any(|k| self.at_keyword(k))
            {
                return self.unsupported("outer or cross join");
            } else {
                break;
            }
        }

        let where_ = if self.eat_keyword("WHERE") {
            let (conds, joins) = self.conjunction()?;
            join_conditions.extend(joins);
            conds
        } else {
            Vec::new()
        };
        if self.at_keyword("GROUP") || self.at_keyword("HAVING") {
            return self.unsupported("GROUP BY / HAVING");
        }
        if self.eat_keyword("ORDER") {
            self.expect_keyword("BY")?;
            loop {
                self.column_ref()?;
                if !self.eat_keyword("ASC") {
                    self.eat_keyword("DESC");
                }
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        let pagination = if self.eat_keyword("LIMIT") {
            let first = self.page_bound()?;
            if self.eat(&Tok::Comma) {
                let second = self.page_bound()?;
                Some(Pagination {
                    offset: Some(first),
                    limit: second,
                })
            } else if self.eat_keyword("OFFSET") {
                let offset = self.page_bound()?;
                Some(Pagination {
                    offset: Some(offset),
                    limit: first,
                })
            } else {
                Some(Pagination {
                    offset: None,
                    limit: first,
                })
            }
        } else {
            None
        };

        if tables.len() > 1 && join_conditions.is_empty() {
            return self.unsupported("multi-table SELECT without join condition");
        }
        join_conditions.sort();
        join_conditions.dedup();

        let after = self.pos;
        self.pos = proj_start;
        let projections = self.projections(proj_end)?;
        self.pos = after;

        Ok(Select {
            tables,
            join_conditions,
            projections,
            where_,
            pagination,
        })
    }

    fn projections(&mut self, end: usize) -> Result<Vec<Projection>, SqlError> {
        let mut out = Vec::new();
        loop {
            if self.eat(&Tok::Star) {
                for (_, table) in self.scope.clone() {
                    let def = self.schema.table(&table).expect("table in scope");
                    for c in &def.columns {
                        out.push(Projection::Column {
                            column: ColumnRef::new(&table, c),
                            alias: None,
                        });
                    }
                }
            } else if let Some(func) = self.aggregate_name() {
                self.pos += 1;
                self.expect(&Tok::LParen, "`(`")?;
                let arg = if self.eat(&Tok::Star) {
                    "*".to_string()
                } else {
                    self.eat_keyword("DISTINCT");
                    self.column_ref()?.to_string()
                };
                self.expect(&Tok::RParen, "`)`")?;
                let alias = self.alias()?;
                out.push(Projection::Aggregate {
                    expr: format!("{}({arg})", func.to_ascii_uppercase()),
                    alias,
                });
            } else {
                // alias.* form
                if matches!(
                    self.tokens.get(self.pos + 1).map(|t| &t.tok),
                    Some(Tok::Dot)
                ) && matches!(
                    self.tokens.get(self.pos + 2).map(|t| &t.tok),
                    Some(Tok::Star)
                ) {
                    let alias = self.ident()?;
                    self.pos += 2;
                    let table = self
                        .scope
                        .iter()
                        .find(|(a, _)| *a == alias)
                        .map(|(_, t)| t.clone())
                        .ok_or_else(|| SqlError::UnknownTable(alias.clone()))?;
                    let def = self.schema.table(&table).expect("table in scope");
                    for c in &def.columns {
                        out.push(Projection::Column {
                            column: ColumnRef::new(&table, c),
                            alias: None,
                        });
                    }
                } else {
                    let column = self.column_ref()?;
                    let alias = self.alias()?;
                    out.push(Projection::Column { column, alias });
                }
            }
            if self.pos >= end || !self.eat(&Tok::Comma) {
                break;
            }
        }
        if self.pos != end {
            return self.error("unexpected token in projection list");
        }
        let mut names = BTreeSet::new();
        for p in &out {
            if !names.insert(p.output_name().to_string()) {
                return Err(SqlError::Parse {
                    offset: self.offset(),
                    message: format!("duplicate output column `{}`", p.output_name()),
                });
            }
        }
        Ok(out)
    }

    fn aggregate_name(&self) -> Option<String> {
        match (
            self.peek().map(|t| &t.tok),
            self.tokens.get(self.pos + 1).map(|t| &t.tok),
        ) {
            (Some(Tok::Ident(s)), Some(Tok::LParen))
                if AGGREGATES.iter().any(|a| a.eq_ignore_ascii_case(s)) =>
            {
                Some(s.clone())
            }
            _ => None,
        }
    }

    fn alias(&mut self) -> Result<Option<String>, SqlError> {
        if self.eat_keyword("AS") {
            return self.ident().map(Some);
        }
        match self.peek().map(|t| &t.tok) {
            Some(Tok::Ident(s)) if !is_reserved(s) => self.ident().map(Some),
            _ => Ok(None),
        }
    }

    fn page_bound(&mut self) -> Result<PageBound, SqlError> {
        match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Number(n)) => {
                self.pos += 1;
                Ok(PageBound::Literal(n))
            }
            Some(Tok::Placeholder(p)) => {
                self.pos += 1;
                Ok(PageBound::Placeholder(p))
            }
            _ => self.error("expected LIMIT/OFFSET bound"),
        }
    }

    /// WHERE body. Column-to-column equalities are returned as join
    /// conditions.
    fn conjunction(&mut self) -> Result<(Vec<Condition>, Vec<JoinCondition>), SqlError> {
        let mut conds = Vec::new();
        let mut joins = Vec::new();
        if self.peek().is_none() {
            return self.error("expected condition after WHERE");
        }
        loop {
            if self.peek().is_some_and(|t| t.tok == Tok::LParen) {
                return self.unsupported("parenthesized condition");
            }
            if self.at_keyword("NOT") || self.at_keyword("EXISTS") {
                return self.unsupported("negated or EXISTS condition");
            }
            let column = self.column_ref()?;
            let op = self.compare_op()?;
            match self.rhs(op)? {
                Rhs::Column(other) => {
                    if op != CompareOp::Eq {
                        return self.unsupported("non-equality column comparison");
                    }
                    joins.push(
                        JoinCondition {
                            left: column,
                            right: other,
                        }
                        .normalized(),
                    );
                }
                Rhs::Value(value, placeholder) => conds.push(Condition {
                    column,
                    op,
                    value,
                    placeholder,
                }),
            }
            if self.at_keyword("OR") {
                return self.unsupported("OR");
            }
            if !self.eat_keyword("AND") {
                break;
            }
        }
        Ok((conds, joins))
    }

    fn compare_op(&mut self) -> Result<CompareOp, SqlError> {
        let op = match self.peek().map(|t| &t.tok) {
            Some(Tok::Op(o)) => match *o {
                "=" => CompareOp::Eq,
                "<>" => CompareOp::Ne,
                "<" => CompareOp::Lt,
                "<=" => CompareOp::Le,
                ">" => CompareOp::Gt,
                ">=" => CompareOp::Ge,
                _ => unreachable!("lexer emits only known operators"),
            },
            Some(Tok::Ident(s)) if s.eq_ignore_ascii_case("IN") => CompareOp::In,
            Some(Tok::Ident(s)) if s.eq_ignore_ascii_case("LIKE") => CompareOp::Like,
            Some(Tok::Ident(s))
                if s.eq_ignore_ascii_case("NOT") || s.eq_ignore_ascii_case("IS") =>
            {
                return self.unsupported("NOT / IS comparison");
            }
            _ => return self.error("expected comparison operator"),
        };
        self.pos += 1;
        Ok(op)
    }

    fn rhs(&mut self, op: CompareOp) -> Result<Rhs, SqlError> {
        if op == CompareOp::In {
            let parens = self.eat(&Tok::LParen);
            if parens && self.at_keyword("SELECT") {
                return self.unsupported("subquery");
            }
            let mut items = Vec::new();
            loop {
                items.push(self.operand()?);
                if !parens || !self.eat(&Tok::Comma) {
                    break;
                }
            }
            if parens {
                self.expect(&Tok::RParen, "`)`")?;
            }
            if items.len() == 1 {
                let (value, placeholder) = items.pop().unwrap();
                return Ok(Rhs::Value(value, placeholder));
            }
            let mut scalars = Vec::new();
            for (v, _) in items {
                match v {
                    ValueSource::Constant(Literal::Scalar(s)) => scalars.push(s),
                    _ => return self.unsupported("IN list mixing placeholders"),
                }
            }
            return Ok(Rhs::Value(
                ValueSource::Constant(Literal::List(scalars)),
                None,
            ));
        }
        if self.peek().is_some_and(|t| t.tok == Tok::LParen) {
            return self.unsupported("subquery or parenthesized operand");
        }
        if matches!(self.peek().map(|t| &t.tok), Some(Tok::Ident(_))) {
            return Ok(Rhs::Column(self.column_ref()?));
        }
        let (v, p) = self.operand()?;
        Ok(Rhs::Value(v, p))
    }

    fn operand(&mut self) -> Result<(ValueSource, Option<String>), SqlError> {
        match self.peek().map(|t| t.tok.clone()) {
            Some(Tok::Number(n)) => {
                self.pos += 1;
                Ok((ValueSource::Constant(Literal::Scalar(Scalar::Int(n))), None))
            }
            Some(Tok::Str(s)) => {
                self.pos += 1;
                Ok((ValueSource::Constant(Literal::Scalar(Scalar::Str(s))), None))
            }
            Some(Tok::Placeholder(name)) => {
                self.pos += 1;
                let value = self
                    .bindings
                    .get(&name)
                    .cloned()
                    .ok_or_else(|| SqlError::UnboundPlaceholder(name.clone()))?;
                Ok((value, Some(name)))
            }
            Some(Tok::Ident(s)) if s.eq_ignore_ascii_case("SELECT") => self.unsupported("subquery"),
            _ => self.error("expected value"),
        }
    }

    fn insert(&mut self) -> Result<Insert, SqlError> {
        self.expect_keyword("INTO")?;
        let table = self.table_ref()?;
        self.expect(&Tok::LParen, "column list")?;
        let mut columns = Vec::new();
        loop {
            let c = self.ident()?;
            if !self.schema.has_column(&table, &c) {
                return Err(SqlError::UnknownColumn(format!("{table}.{c}")));
            }
            columns.push(c);
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(&Tok::RParen, "`)`")?;
        self.expect_keyword("VALUES")?;
        self.expect(&Tok::LParen, "`(`")?;
        let mut values = BTreeMap::new();
        for (i, c) in columns.iter().enumerate() {
            if i > 0 {
                self.expect(&Tok::Comma, "`,`")?;
            }
            let (value, placeholder) = self.operand()?;
            if values
                .insert(c.clone(), Operand { value, placeholder })
                .is_some()
            {
                return self.error(format!("column `{c}` inserted twice"));
            }
        }
        if self.eat(&Tok::Comma) {
            return self.error("more values than columns");
        }
        self.expect(&Tok::RParen, "`)`")?;
        Ok(Insert { table, values })
    }

    fn update(&mut self) -> Result<Update, SqlError> {
        let table = self.table_ref()?;
        self.expect_keyword("SET")?;
        let mut set = BTreeMap::new();
        loop {
            let col = self.column_ref()?;
            self.expect(&Tok::Op("="), "`=`")?;
            let (value, placeholder) = self.operand()?;
            if set
                .insert(col.column.clone(), Operand { value, placeholder })
                .is_some()
            {
                return self.error(format!("column `{}` set twice", col.column));
            }
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        let where_ = self.mutation_where()?;
        Ok(Update { table, set, where_ })
    }

    fn delete(&mut self) -> Result<Delete, SqlError> {
        self.expect_keyword("FROM")?;
        let table = self.table_ref()?;
        let where_ = self.mutation_where()?;
        Ok(Delete { table, where_ })
    }

    fn mutation_where(&mut self) -> Result<Vec<Condition>, SqlError> {
        if !self.eat_keyword("WHERE") {
            return Ok(Vec::new());
        }
        let (conds, joins) = self.conjunction()?;
        if !joins.is_empty() {
            return self.unsupported("column comparison in single-table statement");
        }
        Ok(conds)
    }
}

fn is_reserved(s: &str) -> bool {
    RESERVED.iter().any(|k| k.eq_ignore_ascii_case(s))
}
