//! Resource-ID data-flow analysis for web applications, micro-segmentation
//! policies derived from it, and the runtime check that enforces them.
//!
//! The pipeline: [`app::load_app`] → [`taint::all_facts`] →
//! [`classify::classify_all`] → [`msg::build_policy`] → [`runtime::Enforcer`].
//! [`harness`] executes app models against an [`store::InMemoryStore`].

pub mod app;
pub mod classify;
pub mod harness;
pub mod msg;
pub mod runtime;
pub mod schema;
pub mod sql;
pub mod store;
pub mod taint;

use thiserror::Error;

pub use app::{load_app, AppError, AppModel};
pub use classify::{classify_all, Classification, InjectionPoint, Role, SqlOp};
pub use harness::{
    enforce_and_replay, scan, Finding, HarnessError, ReplayReport, Scenario, ThreatMode,
};
pub use msg::{build_policy, AuthzPolicy, MsgError, MsgInterval, MsgIntervalSet};
pub use runtime::{
    AuthzError, Basis, CacheConfig, Decision, Enforcer, IdCache, UserContext, Verdict,
};
pub use schema::{ResourceIdKind, Schema, SchemaError};
pub use sql::{Literal, ReducedSelect, Scalar, SqlError, ValueSource};
pub use store::{InMemoryStore, ResourceStore, StoreError};
pub use taint::{all_facts, FlowFact, TaintError};

/// Any error the library reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error(transparent)]
    App(#[from] AppError),
    #[error(transparent)]
    Taint(#[from] TaintError),
    #[error(transparent)]
    Msg(#[from] MsgError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Authz(#[from] AuthzError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

/// Facts, classifications and policy for one app.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub facts: Vec<FlowFact>,
    pub classifications: Vec<Classification>,
    pub policy: AuthzPolicy,
}

/// Runs taint analysis (or checks the given facts), classification and
/// policy construction.
pub fn analyze(model: &AppModel, facts: Option<Vec<FlowFact>>) -> Result<Analysis, Error> {
    let facts = match facts {
        Some(f) => {
            taint::check_facts(model, &f)?;
            taint::normalize_facts(f)
        }
        None => all_facts(model),
    };
    let classifications = classify_all(model, &facts);
    let policy = build_policy(model, &facts, &classifications)?;
    Ok(Analysis {
        facts,
        classifications,
        policy,
    })
}
