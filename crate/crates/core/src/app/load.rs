use std::collections::{BTreeMap, BTreeSet};

use super::{
    AppDocument, AppError, AppModel, ArgSource, EndpointDoc, EndpointModel, Expr, HandlerStmt,
    Navigation, PageModel, ParamLocation, APP_FORMAT,
};
use crate::sql::{parse_sql, placeholders, SqlBody, ValueSource};

/// Parses and cross-checks an app document.
pub fn load_app(document: &str) -> Result<AppModel, AppError> {
    let doc: AppDocument = serde_json::from_str(document).map_err(|e| {
        let msg = e.to_string();
        if msg.contains("validation") {
            AppError::Schema(crate::schema::SchemaError::Validation(msg))
        } else {
            AppError::Parse(msg)
        }
    })?;
    AppModel::from_document(doc)
}

impl AppModel {
    pub fn from_document(doc: AppDocument) -> Result<AppModel, AppError> {
        if doc.format != APP_FORMAT {
            return Err(AppError::Parse(format!(
                "unsupported format `{}`, expected `{APP_FORMAT}`",
                doc.format
            )));
        }
        doc.schema.validate()?;

        let mut claim_kinds = BTreeMap::new();
        for tc in &doc.token_claims {
            let kind = match &tc.maps_to {
                None => None,
                Some(col) => Some(
                    doc.schema
                        .resource_kind(&col.table, &col.column)
                        .ok_or_else(|| {
                            AppError::DanglingReference(format!(
                                "token claim `{}` maps to `{col}`, which is not a key column",
                                tc.claim
                            ))
                        })?,
                ),
            };
            if claim_kinds.insert(tc.claim.clone(), kind).is_some() {
                return Err(AppError::DuplicateId(format!("token claim `{}`", tc.claim)));
            }
        }

        let mut seen = BTreeSet::new();
        let mut endpoints = Vec::with_capacity(doc.endpoints.len());
        for ep in &doc.endpoints {
            if !seen.insert(ep.endpoint.id.as_str()) {
                return Err(AppError::DuplicateId(format!(
                    "endpoint `{}`",
                    ep.endpoint.id
                )));
            }
            endpoints.push(load_endpoint(&doc, ep, &claim_kinds)?);
        }

        let mut page_ids = BTreeSet::new();
        for page in &doc.pages {
            if !page_ids.insert(page.id.as_str()) {
                return Err(AppError::DuplicateId(format!("page `{}`", page.id)));
            }
        }
        for page in &doc.pages {
            check_page(&doc, page)?;
        }

        Ok(AppModel {
            document: doc,
            endpoints,
            claim_kinds,
        })
    }
}

/// What a handler variable was defined by.
#[derive(Clone)]
enum Def<'a> {
    Expr(&'a Expr),
    Project { src: &'a str, field: &'a str },
    Rows(&'a str),
}

struct Scope<'a> {
    endpoint: &'a EndpointDoc,
    defs: BTreeMap<&'a str, Def<'a>>,
    executed: BTreeSet<&'a str>,
    claims: &'a BTreeMap<String, Option<crate::schema::ResourceIdKind>>,
}

impl<'a> Scope<'a> {
    fn ep_id(&self) -> &str {
        &self.endpoint.endpoint.id
    }

    fn dangling(&self, what: String) -> AppError {
        AppError::DanglingReference(format!("endpoint `{}`: {what}", self.ep_id()))
    }

    fn check_expr(&self, expr: &Expr) -> Result<(), AppError> {
        match expr {
            Expr::Var(v) => {
                if !self.defs.contains_key(v.as_str()) {
                    return Err(self.dangling(format!("variable `{v}` used before definition")));
                }
            }
            Expr::Param(p) => {
                if self.endpoint.endpoint.param(p).is_none() {
                    return Err(self.dangling(format!("unknown param `{p}`")));
                }
            }
            Expr::TokenClaim(c) => {
                if !self.claims.contains_key(c) {
                    return Err(self.dangling(format!("undeclared token claim `{c}`")));
                }
            }
            Expr::Literal(_) => {}
            Expr::SqlResult { stmt, .. } => {
                if !self.executed.contains(stmt.as_str()) {
                    return Err(
                        self.dangling(format!("sql_result of unexecuted statement `{stmt}`"))
                    );
                }
            }
            Expr::CollectionOf(items) => {
                for item in items {
                    self.check_expr(item)?;
                }
            }
        }
        Ok(())
    }

    fn rows_of(&self, var: &str) -> Option<&'a str> {
        match self.defs.get(var)? {
            Def::Rows(stmt) => Some(stmt),
            Def::Expr(Expr::Var(v)) => self.rows_of(v),
            _ => None,
        }
    }

    /// Single value source an expression stands for; mixed origins resolve
    /// to `Unbound`, which reduction treats like user input.
    fn source_of(&self, expr: &Expr) -> ValueSource {
        match expr {
            Expr::Var(v) => self.source_of_var(v),
            Expr::Param(p) => ValueSource::Param {
                endpoint: self.ep_id().to_string(),
                name: p.clone(),
            },
            Expr::TokenClaim(c) => ValueSource::TokenDerived { claim: c.clone() },
            Expr::Literal(l) => ValueSource::Constant(l.clone()),
            Expr::SqlResult { stmt, column } => ValueSource::SqlOutput {
                stmt: stmt.clone(),
                column: column.clone(),
            },
            Expr::CollectionOf(items) => {
                let mut sources: Vec<ValueSource> =
                    items.iter().map(|e| self.source_of(e)).collect();
                sources.dedup();
                if sources.len() == 1 {
                    sources.remove(0)
                } else {
                    ValueSource::Unbound
                }
            }
        }
    }

    fn source_of_var(&self, var: &str) -> ValueSource {
        match self.defs.get(var) {
            Some(Def::Expr(e)) => self.source_of(e),
            Some(Def::Project { src, field }) => match self.rows_of(src) {
                Some(stmt) => ValueSource::SqlOutput {
                    stmt: stmt.to_string(),
                    column: field.to_string(),
                },
                None => self.source_of_var(src),
            },
            Some(Def::Rows(_)) | None => ValueSource::Unbound,
        }
    }
}

fn load_endpoint(
    doc: &AppDocument,
    ep: &EndpointDoc,
    claims: &BTreeMap<String, Option<crate::schema::ResourceIdKind>>,
) -> Result<EndpointModel, AppError> {
    let e = &ep.endpoint;
    let mut names = BTreeSet::new();
    for p in &e.params {
        if !names.insert(p.name.as_str()) {
            return Err(AppError::DuplicateId(format!(
                "endpoint `{}`: param `{}`",
                e.id, p.name
            )));
        }
    }
    for seg in e.path_params() {
        match e.param(seg) {
            Some(p) if p.location == ParamLocation::Path => {}
            _ => {
                return Err(AppError::DanglingReference(format!(
                    "endpoint `{}`: path segment `{{{seg}}}` has no path param",
                    e.id
                )))
            }
        }
    }
    let mut sql_ids = BTreeSet::new();
    for s in &ep.sql {
        if !sql_ids.insert(s.id.as_str()) {
            return Err(AppError::DuplicateId(format!(
                "endpoint `{}`: statement `{}`",
                e.id, s.id
            )));
        }
    }

    let mut scope = Scope {
        endpoint: ep,
        defs: BTreeMap::new(),
        executed: BTreeSet::new(),
        claims,
    };
    let mut derived: BTreeMap<&str, BTreeMap<String, ValueSource>> = BTreeMap::new();
    let mut projections: Vec<(&str, &str)> = Vec::new();

    let define = |scope: &mut Scope<'_>, dst: &str| -> Result<(), AppError> {
        if scope.defs.contains_key(dst) {
            return Err(AppError::DuplicateId(format!(
                "endpoint `{}`: variable `{dst}` assigned twice",
                e.id
            )));
        }
        Ok(())
    };

    for stmt in &ep.handler {
        match stmt {
            HandlerStmt::Assign { dst, src } => {
                scope.check_expr(src)?;
                define(&mut scope, dst)?;
                scope.defs.insert(dst, Def::Expr(src));
            }
            HandlerStmt::Project { dst, src, field } => {
                if !scope.defs.contains_key(src.as_str()) {
                    return Err(scope.dangling(format!("variable `{src}` used before definition")));
                }
                if let Some(rows) = scope.rows_of(src) {
                    projections.push((rows, field));
                }
                define(&mut scope, dst)?;
                scope.defs.insert(dst, Def::Project { src, field });
            }
            HandlerStmt::ExecSql { stmt, args, dst } => {
                let Some(sql) = ep.sql.iter().find(|s| &s.id == stmt) else {
                    return Err(scope.dangling(format!("exec_sql of unknown statement `{stmt}`")));
                };
                if !scope.executed.insert(stmt) {
                    return Err(AppError::DuplicateId(format!(
                        "endpoint `{}`: statement `{stmt}` executed twice",
                        e.id
                    )));
                }
                let (values, pages) = placeholders(&sql.text).map_err(|source| AppError::Sql {
                    endpoint: e.id.clone(),
                    stmt: stmt.clone(),
                    source,
                })?;
                for name in args.keys() {
                    if !values.contains(name) && !pages.contains(name) {
                        return Err(scope.dangling(format!(
                            "argument `{name}` is not a placeholder of `{stmt}`"
                        )));
                    }
                }
                for name in &values {
                    if !args.contains_key(name) && !sql.bindings.contains_key(name) {
                        return Err(scope.dangling(format!(
                            "placeholder `:{name}` of `{stmt}` has no argument"
                        )));
                    }
                }
                let mut binds = BTreeMap::new();
                for (name, expr) in args {
                    scope.check_expr(expr)?;
                    if values.contains(name) {
                        binds.insert(name.clone(), scope.source_of(expr));
                    }
                }
                derived.insert(stmt, binds);
                if let Some(dst) = dst {
                    define(&mut scope, dst)?;
                    scope.defs.insert(dst, Def::Rows(stmt));
                }
            }
            HandlerStmt::Return { fields } => {
                for expr in fields.values() {
                    scope.check_expr(expr)?;
                }
            }
        }
    }

    let mut sql = Vec::with_capacity(ep.sql.len());
    for s in &ep.sql {
        let mut binds = derived.remove(s.id.as_str()).unwrap_or_default();
        for (k, v) in &s.bindings {
            binds.insert(k.clone(), v.clone());
        }
        if !scope.executed.contains(s.id.as_str()) {
            let (values, _) = placeholders(&s.text).map_err(|source| AppError::Sql {
                endpoint: e.id.clone(),
                stmt: s.id.clone(),
                source,
            })?;
            for name in values {
                binds.entry(name).or_insert(ValueSource::Unbound);
            }
        }
        for v in binds.values() {
            check_bound_source(&e.id, ep, v)?;
        }
        let parsed =
            parse_sql(&s.id, &s.text, &doc.schema, &binds).map_err(|source| AppError::Sql {
                endpoint: e.id.clone(),
                stmt: s.id.clone(),
                source,
            })?;
        sql.push(parsed);
    }

    // Output names referenced by projections and sql_result must exist.
    let outputs = |stmt: &str| -> Option<Vec<String>> {
        sql.iter().find(|s| s.id == stmt).map(|s| match &s.body {
            SqlBody::Select(sel) => sel
                .projections
                .iter()
                .map(|p| p.output_name().to_string())
                .collect(),
            _ => Vec::new(),
        })
    };
    let mut referenced: Vec<(&str, &str)> = projections;
    collect_sql_results(&ep.handler, &mut referenced);
    for (stmt, column) in referenced {
        let known = outputs(stmt).unwrap_or_default();
        if !known.iter().any(|o| o == column) {
            return Err(AppError::DanglingReference(format!(
                "endpoint `{}`: statement `{stmt}` has no output `{column}`",
                e.id
            )));
        }
    }
    for s in &sql {
        for c in s.where_conditions() {
            if let ValueSource::SqlOutput { stmt, column } = &c.value {
                let known = outputs(stmt).unwrap_or_default();
                if stmt == &s.id || !known.iter().any(|o| o == column) {
                    return Err(AppError::DanglingReference(format!(
                        "endpoint `{}`: statement `{}` reads `{stmt}.{column}`, which is not an earlier output",
                        e.id, s.id
                    )));
                }
            }
        }
    }

    Ok(EndpointModel {
        endpoint: e.clone(),
        handler: ep.handler.clone(),
        sql,
    })
}

fn collect_sql_results<'a>(handler: &'a [HandlerStmt], out: &mut Vec<(&'a str, &'a str)>) {
    fn walk<'a>(e: &'a Expr, out: &mut Vec<(&'a str, &'a str)>) {
        match e {
            Expr::SqlResult { stmt, column } => out.push((stmt, column)),
            Expr::CollectionOf(items) => items.iter().for_each(|i| walk(i, out)),
            _ => {}
        }
    }
    for stmt in handler {
        match stmt {
            HandlerStmt::Assign { src, .. } => walk(src, out),
            HandlerStmt::ExecSql { args, .. } => args.values().for_each(|e| walk(e, out)),
            HandlerStmt::Return { fields } => fields.values().for_each(|e| walk(e, out)),
            HandlerStmt::Project { .. } => {}
        }
    }
}

fn check_bound_source(endpoint: &str, ep: &EndpointDoc, v: &ValueSource) -> Result<(), AppError> {
    match v {
        ValueSource::Param {
            endpoint: owner,
            name,
        } => {
            if owner != endpoint || ep.endpoint.param(name).is_none() {
                return Err(AppError::DanglingReference(format!(
                    "endpoint `{endpoint}`: binding refers to unknown param `{owner}.{name}`"
                )));
            }
        }
        ValueSource::SqlOutput { stmt, .. } if !ep.sql.iter().any(|s| &s.id == stmt) => {
            return Err(AppError::DanglingReference(format!(
                "endpoint `{endpoint}`: binding refers to unknown statement `{stmt}`"
            )));
        }
        _ => {}
    }
    Ok(())
}

fn check_page(doc: &AppDocument, page: &PageModel) -> Result<(), AppError> {
    let dangling =
        |what: String| AppError::DanglingReference(format!("page `{}`: {what}", page.id));
    let mut ids = BTreeSet::new();
    for id in page
        .on_load
        .iter()
        .map(|c| c.id.as_str())
        .chain(page.elements.iter().map(|e| e.id.as_str()))
    {
        if !ids.insert(id) {
            return Err(AppError::DuplicateId(format!(
                "page `{}`: element `{id}`",
                page.id
            )));
        }
    }
    let mut prior_calls: BTreeSet<&str> = BTreeSet::new();
    let check_source = |src: &ArgSource, prior: &BTreeSet<&str>| -> Result<(), AppError> {
        match src {
            ArgSource::ResponseField { call, field } => {
                if !prior.contains(call.as_str()) {
                    return Err(dangling(format!(
                        "response_field of unknown or later call `{call}`"
                    )));
                }
                let producer = page
                    .call(call)
                    .map(|c| c.endpoint.as_str())
                    .unwrap_or_default();
                let returns = doc
                    .endpoints
                    .iter()
                    .find(|e| e.endpoint.id == producer)
                    .is_some_and(|e| {
                        e.handler.iter().any(|h| {
                            matches!(h, HandlerStmt::Return { fields } if fields.contains_key(field))
                        })
                    });
                if !returns {
                    return Err(dangling(format!(
                        "endpoint `{producer}` returns no field `{field}` (call `{call}`)"
                    )));
                }
            }
            ArgSource::RouterParam(name) => {
                if !page.router_params.contains(name) {
                    return Err(dangling(format!("undeclared router param `{name}`")));
                }
            }
            ArgSource::PageVar(_) | ArgSource::Literal(_) | ArgSource::ClientStore(_) => {}
        }
        Ok(())
    };
    let check_call = |call: &super::ApiCall, prior: &BTreeSet<&str>| -> Result<(), AppError> {
        let Some(target) = doc
            .endpoints
            .iter()
            .find(|e| e.endpoint.id == call.endpoint)
        else {
            return Err(dangling(format!(
                "call `{}` targets unknown endpoint `{}`",
                call.id, call.endpoint
            )));
        };
        for (param, src) in &call.args {
            if target.endpoint.param(param).is_none() {
                return Err(dangling(format!(
                    "call `{}` binds unknown param `{param}` of `{}`",
                    call.id, call.endpoint
                )));
            }
            check_source(src, prior)?;
        }
        Ok(())
    };
    let check_nav = |nav: &Navigation, prior: &BTreeSet<&str>| -> Result<(), AppError> {
        let Some(target) = doc.pages.iter().find(|p| p.id == nav.target_page) else {
            return Err(dangling(format!(
                "navigation to unknown page `{}`",
                nav.target_page
            )));
        };
        for (param, src) in &nav.carried {
            if !target.router_params.contains(param) {
                return Err(dangling(format!(
                    "page `{}` declares no router param `{param}`",
                    target.id
                )));
            }
            check_source(src, prior)?;
        }
        Ok(())
    };
    for call in &page.on_load {
        check_call(call, &prior_calls)?;
        prior_calls.insert(&call.id);
    }
    // events fire after every on-load call completed, and may use each other's
    // results in document order
    for el in &page.elements {
        if let Some(call) = el.call() {
            check_call(call, &prior_calls)?;
            prior_calls.insert(&call.id);
        }
        if let Some(nav) = el.navigation() {
            check_nav(nav, &prior_calls)?;
        }
    }
    Ok(())
}
