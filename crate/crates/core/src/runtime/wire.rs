//! JSON bodies of the network enforcement endpoints.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AuthzError, Decision, Enforcer, UserContext, Verdict};
use crate::sql::Scalar;
use crate::store::ResourceStore;

pub const WIRE_FORMAT: &str = "bolaz-rt/1";

fn wire_format() -> String {
    WIRE_FORMAT.to_string()
}

/// Body of `POST /authorize`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorizeRequest {
    #[serde(default = "wire_format")]
    pub format: String,
    pub user_id: String,
    #[serde(default)]
    pub claims: BTreeMap<String, Scalar>,
    pub endpoint: String,
    pub param: String,
    pub value: Scalar,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorizeResponse {
    pub format: String,
    /// Allow only if every decision allows.
    pub verdict: Verdict,
    pub decisions: Vec<Decision>,
}

/// Body of `POST /producer-response`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProducerResponseRequest {
    #[serde(default = "wire_format")]
    pub format: String,
    pub user_id: String,
    #[serde(default)]
    pub claims: BTreeMap<String, Scalar>,
    pub endpoint: String,
    pub fields: BTreeMap<String, Vec<Scalar>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProducerResponseAck {
    pub format: String,
    pub inserted: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub format: String,
    pub error: String,
}

impl WireError {
    pub fn new(error: impl ToString) -> Self {
        WireError {
            format: wire_format(),
            error: error.to_string(),
        }
    }
}

fn check_format(format: &str) -> Result<(), WireError> {
    if format == WIRE_FORMAT {
        Ok(())
    } else {
        Err(WireError::new(format!(
            "unsupported format `{format}`, expected `{WIRE_FORMAT}`"
        )))
    }
}

fn user(user_id: &str, claims: &BTreeMap<String, Scalar>) -> UserContext {
    UserContext {
        user_id: user_id.to_string(),
        claims: claims.clone(),
        session_id: String::new(),
    }
}

/// Why a wire request failed: bad input, or an enforcement error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireFailure {
    BadRequest(WireError),
    Authz(AuthzError),
}

pub fn handle_authorize(
    enforcer: &Enforcer,
    store: &dyn ResourceStore,
    req: &AuthorizeRequest,
) -> Result<AuthorizeResponse, WireFailure> {
    check_format(&req.format).map_err(WireFailure::BadRequest)?;
    let points = enforcer.points_for(&req.endpoint, &req.param);
    if points.is_empty() {
        return Err(WireFailure::Authz(AuthzError::UnknownPoint(format!(
            "{}:{}",
            req.endpoint, req.param
        ))));
    }
    let u = user(&req.user_id, &req.claims);
    let decisions = points
        .iter()
        .map(|p| enforcer.authorize(&u, p, &req.value, store))
        .collect::<Result<Vec<_>, _>>()
        .map_err(WireFailure::Authz)?;
    let verdict = if decisions.iter().all(Decision::allowed) {
        Verdict::Allow
    } else {
        Verdict::Deny
    };
    Ok(AuthorizeResponse {
        format: wire_format(),
        verdict,
        decisions,
    })
}

pub fn handle_producer_response(
    enforcer: &Enforcer,
    req: &ProducerResponseRequest,
) -> Result<ProducerResponseAck, WireFailure> {
    check_format(&req.format).map_err(WireFailure::BadRequest)?;
    let delta = enforcer
        .on_producer_response(&user(&req.user_id, &req.claims), &req.endpoint, &req.fields)
        .map_err(WireFailure::Authz)?;
    Ok(ProducerResponseAck {
        format: wire_format(),
        inserted: delta.count(),
    })
}
