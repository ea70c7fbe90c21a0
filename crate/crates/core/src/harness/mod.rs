//! Executes app models against a store: plain interpretation, vulnerability
//! scanning by out-of-interval replay, and scripted replay under
//! enforcement.

mod interpret;
mod owner;
mod replay;
mod scan;

use thiserror::Error;

use crate::app::AppModel;
use crate::runtime::{AuthzError, UserContext};
use crate::store::StoreError;

pub use interpret::{interpret, Response, StmtOutcome};
pub use owner::Ownership;
pub use replay::{
    enforce_and_replay, random_scenario, stress_replay, ReplayReport, Replayer, Scenario, Step,
    StepRecord, REPLAY_FORMAT,
};
pub use scan::{scan, Evidence, Finding, ThreatMode};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HarnessError {
    #[error("unknown endpoint `{0}`")]
    UnknownEndpoint(String),
    #[error("endpoint `{endpoint}` needs argument `{param}`")]
    MissingArg { endpoint: String, param: String },
    #[error("user token lacks claim `{0}`")]
    MissingClaim(String),
    #[error("endpoint `{0}` requires an authenticated user")]
    Unauthenticated(String),
    #[error("evaluation error: {0}")]
    Type(String),
    #[error("store unavailable: {0}")]
    Store(#[from] StoreError),
    #[error(transparent)]
    Authz(#[from] AuthzError),
    #[error("insufficient seed: {0}")]
    InsufficientSeed(String),
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("scenario parse error: {0}")]
    Scenario(String),
}

/// The fixture's users as request contexts.
pub fn fixture_users(model: &AppModel) -> Vec<UserContext> {
    model
        .fixture()
        .map(|f| {
            f.users
                .iter()
                .map(|u| UserContext {
                    user_id: u.user_id.clone(),
                    claims: u.claims.clone(),
                    session_id: String::new(),
                })
                .collect()
        })
        .unwrap_or_default()
}
