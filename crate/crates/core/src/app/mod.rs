//! Declarative three-tier application model.
//!
//! An app document lists the schema, the endpoints with their SQL and a
//! straight-line handler body, and the frontend pages that call them. It is
//! both what the taint tracker analyzes and what the harness executes.

mod load;
mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{ResourceIdKind, Schema, SchemaError};
use crate::sql::{ColumnRef, Literal, Scalar, SqlError, SqlStmt, ValueSource};

pub use load::load_app;
pub use validate::{validate_app, Diagnostic};

pub const APP_FORMAT: &str = "bolaz-app/1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AppError {
    #[error("app parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("endpoint `{endpoint}`, statement `{stmt}`: {source}")]
    Sql {
        endpoint: String,
        stmt: String,
        #[source]
        source: SqlError,
    },
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("duplicate id: {0}")]
    DuplicateId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HttpMethod {
    Get,
    Post,
    Put,
    Patch,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamLocation {
    Path,
    Query,
    Body,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDef {
    pub name: String,
    pub location: ParamLocation,
    /// Value the scanner uses when it has no better choice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<Literal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub id: String,
    pub method: HttpMethod,
    pub path_template: String,
    #[serde(default)]
    pub params: Vec<ParamDef>,
    #[serde(default)]
    pub token_required: bool,
    #[serde(default)]
    pub admin_only: bool,
}

impl Endpoint {
    pub fn param(&self, name: &str) -> Option<&ParamDef> {
        self.params.iter().find(|p| p.name == name)
    }

    /// `{name}` segments of the path template.
    pub fn path_params(&self) -> Vec<&str> {
        let mut out = Vec::new();
        let mut rest = self.path_template.as_str();
        while let Some(open) = rest.find('{') {
            let Some(close) = rest[open..].find('}') else {
                break;
            };
            out.push(&rest[open + 1..open + close]);
            rest = &rest[open + close + 1..];
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Var(String),
    Param(String),
    TokenClaim(String),
    Literal(Literal),
    SqlResult { stmt: String, column: String },
    CollectionOf(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandlerStmt {
    Assign {
        dst: String,
        src: Expr,
    },
    /// `dst = src.field`; on a row set this selects one output column.
    Project {
        dst: String,
        src: String,
        field: String,
    },
    ExecSql {
        stmt: String,
        #[serde(default)]
        args: BTreeMap<String, Expr>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dst: Option<String>,
    },
    Return {
        fields: BTreeMap<String, Expr>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlDoc {
    pub id: String,
    pub text: String,
    /// Explicit value sources; they take precedence over what the handler's
    /// `exec_sql` arguments imply.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bindings: BTreeMap<String, ValueSource>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointDoc {
    pub endpoint: Endpoint,
    #[serde(default)]
    pub sql: Vec<SqlDoc>,
    #[serde(default)]
    pub handler: Vec<HandlerStmt>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgSource {
    ResponseField {
        call: String,
        field: String,
    },
    RouterParam(String),
    PageVar(String),
    Literal(Literal),
    /// Cookie or local-storage value; carries no producer association.
    ClientStore(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiCall {
    pub id: String,
    pub endpoint: String,
    #[serde(default)]
    pub args: BTreeMap<String, ArgSource>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Navigation {
    pub target_page: String,
    #[serde(default)]
    pub carried: BTreeMap<String, ArgSource>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventAction {
    Call(ApiCall),
    Navigate(Navigation),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Event(EventAction),
    Navigate(Navigation),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub id: String,
    #[serde(flatten)]
    pub kind: ElementKind,
}

impl Element {
    pub fn call(&self) -> Option<&ApiCall> {
        match &self.kind {
            ElementKind::Event(EventAction::Call(c)) => Some(c),
            _ => None,
        }
    }

    pub fn navigation(&self) -> Option<&Navigation> {
        match &self.kind {
            ElementKind::Event(EventAction::Navigate(n)) | ElementKind::Navigate(n) => Some(n),
            ElementKind::Event(EventAction::Call(_)) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageModel {
    pub id: String,
    #[serde(default)]
    pub router_params: Vec<String>,
    #[serde(default)]
    pub on_load: Vec<ApiCall>,
    #[serde(default)]
    pub elements: Vec<Element>,
}

impl PageModel {
    /// All calls on the page: on-load calls first, then event calls.
    pub fn calls(&self) -> impl Iterator<Item = &ApiCall> {
        self.on_load
            .iter()
            .chain(self.elements.iter().filter_map(Element::call))
    }

    pub fn call(&self, id: &str) -> Option<&ApiCall> {
        self.calls().find(|c| c.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenClaim {
    pub claim: String,
    /// Key column the claim's value stands for, or `None` when opaque.
    #[serde(default)]
    pub maps_to: Option<ColumnRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureUser {
    pub user_id: String,
    #[serde(default)]
    pub claims: BTreeMap<String, Scalar>,
}

/// Seed data for the harness: users and initial table rows.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixture {
    #[serde(default)]
    pub users: Vec<FixtureUser>,
    #[serde(default)]
    pub rows: BTreeMap<String, Vec<BTreeMap<String, Scalar>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppDocument {
    pub format: String,
    pub schema: Schema,
    #[serde(default)]
    pub token_claims: Vec<TokenClaim>,
    #[serde(default)]
    pub endpoints: Vec<EndpointDoc>,
    #[serde(default)]
    pub pages: Vec<PageModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<Fixture>,
}

/// An endpoint with its parsed statements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndpointModel {
    pub endpoint: Endpoint,
    pub handler: Vec<HandlerStmt>,
    pub sql: Vec<SqlStmt>,
}

impl EndpointModel {
    pub fn id(&self) -> &str {
        &self.endpoint.id
    }

    pub fn stmt(&self, id: &str) -> Option<&SqlStmt> {
        self.sql.iter().find(|s| s.id == id)
    }
}

/// A loaded, fully cross-checked application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppModel {
    document: AppDocument,
    endpoints: Vec<EndpointModel>,
    claim_kinds: BTreeMap<String, Option<ResourceIdKind>>,
}

impl AppModel {
    pub fn document(&self) -> &AppDocument {
        &self.document
    }

    pub fn schema(&self) -> &Schema {
        &self.document.schema
    }

    pub fn endpoints(&self) -> &[EndpointModel] {
        &self.endpoints
    }

    pub fn endpoint(&self, id: &str) -> Option<&EndpointModel> {
        self.endpoints.iter().find(|e| e.endpoint.id == id)
    }

    /// Endpoints that take part in analysis (administrator endpoints do not).
    pub fn analyzed_endpoints(&self) -> impl Iterator<Item = &EndpointModel> {
        self.endpoints.iter().filter(|e| !e.endpoint.admin_only)
    }

    pub fn pages(&self) -> &[PageModel] {
        &self.document.pages
    }

    pub fn page(&self, id: &str) -> Option<&PageModel> {
        self.document.pages.iter().find(|p| p.id == id)
    }

    pub fn token_claims(&self) -> &[TokenClaim] {
        &self.document.token_claims
    }

    pub fn claim_kind(&self, claim: &str) -> Option<&ResourceIdKind> {
        self.claim_kinds.get(claim).and_then(Option::as_ref)
    }

    pub fn fixture(&self) -> Option<&Fixture> {
        self.document.fixture.as_ref()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.document).expect("app document serializes")
    }
}

impl Serialize for AppModel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.document.serialize(serializer)
    }
}
