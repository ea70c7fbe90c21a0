//! Authorization intervals: built from producer SELECTs, matched to the
//! injection points their IDs flow into, resolved, optimized, and emitted as
//! a policy.

mod build;
mod optimize;
mod resolve;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::InjectionPoint;
use crate::schema::ResourceIdKind;
use crate::sql::{ColumnRef, ReducedSelect, SqlError};
use crate::taint::FlowFact;

pub use build::build_intervals;
pub use optimize::optimize_set;
pub use resolve::{build_policy, Backtracked, PolicyContext};

pub const POLICY_FORMAT: &str = "bolaz-policy/1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MsgError {
    #[error("cyclic interval dependency: {0}")]
    CyclicDependency(String),
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error("policy parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dependency {
    /// An FK condition fed by the producer's own parameter; resolves through
    /// the interval set guarding that parameter.
    ConsumedKind {
        kind: ResourceIdKind,
        via_param: String,
    },
    TokenUser {
        claim: String,
    },
    /// A condition fed by an earlier statement's output.
    ParentInterval {
        interval_id: String,
        via_column: ColumnRef,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsgInterval {
    pub id: String,
    pub producer_endpoint: String,
    pub stmt: String,
    pub reduced: ReducedSelect,
    pub kind: ResourceIdKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub deps: Vec<Dependency>,
    /// A foreign-key interval that could not be traced back to the
    /// primary-key interval it was filled from.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub incomplete: bool,
}

impl MsgInterval {
    pub fn interval_id(endpoint: &str, stmt: &str, kind: &ResourceIdKind) -> String {
        format!("{endpoint}/{stmt}/{}", kind.qualified())
    }

    /// Ids of intervals referenced by nested membership conditions.
    pub fn referenced_intervals(&self) -> BTreeSet<&str> {
        self.reduced
            .disjuncts()
            .flatten()
            .filter_map(|c| match &c.value {
                crate::sql::ValueSource::IntervalRef { intervals } => {
                    Some(intervals.iter().map(String::as_str))
                }
                _ => None,
            })
            .flatten()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsgIntervalSet {
    pub point: InjectionPoint,
    pub intervals: Vec<MsgInterval>,
    pub unrestricted: bool,
}

/// Which producer responses may populate the cache of which points.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheSpec {
    pub producer_endpoint: String,
    pub return_field: String,
    pub kind: ResourceIdKind,
    /// Ids of the injection points whose intervals contain every value this
    /// field can carry.
    pub points: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthzPolicy {
    pub format: String,
    pub sets: Vec<MsgIntervalSet>,
    pub producer_cache_specs: Vec<CacheSpec>,
    pub unassociated_points: Vec<InjectionPoint>,
    /// Intervals referenced by nested membership conditions, by id.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub referenced: Vec<MsgInterval>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl AuthzPolicy {
    pub fn empty() -> Self {
        AuthzPolicy {
            format: POLICY_FORMAT.to_string(),
            sets: Vec::new(),
            producer_cache_specs: Vec::new(),
            unassociated_points: Vec::new(),
            referenced: Vec::new(),
            diagnostics: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, MsgError> {
        let policy: AuthzPolicy =
            serde_json::from_str(text).map_err(|e| MsgError::Parse(e.to_string()))?;
        if policy.format != POLICY_FORMAT {
            return Err(MsgError::Parse(format!(
                "unsupported format `{}`, expected `{POLICY_FORMAT}`",
                policy.format
            )));
        }
        Ok(policy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn set_for(&self, point: &InjectionPoint) -> Option<&MsgIntervalSet> {
        self.sets.iter().find(|s| &s.point == point)
    }

    pub fn is_unassociated(&self, point: &InjectionPoint) -> bool {
        self.unassociated_points.contains(point)
    }

    pub fn restricted_sets(&self) -> impl Iterator<Item = &MsgIntervalSet> {
        self.sets.iter().filter(|s| !s.unrestricted)
    }

    /// Every point the policy knows about.
    pub fn points(&self) -> impl Iterator<Item = &InjectionPoint> {
        self.sets
            .iter()
            .map(|s| &s.point)
            .chain(&self.unassociated_points)
    }
}

/// A producer's return field observed to reach a consumer's parameter.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Association {
    pub producer_endpoint: String,
    pub return_field: String,
    pub consumer_endpoint: String,
    pub param: String,
}

/// Producer-to-consumer links projected from frontend edges.
pub fn associate(facts: &[FlowFact]) -> Vec<Association> {
    let set: BTreeSet<Association> = facts
        .iter()
        .filter_map(|f| match f {
            FlowFact::FrontendEdge {
                producer_endpoint,
                return_field,
                consumer_endpoint,
                param,
                ..
            } => Some(Association {
                producer_endpoint: producer_endpoint.clone(),
                return_field: return_field.clone(),
                consumer_endpoint: consumer_endpoint.clone(),
                param: param.clone(),
            }),
            _ => None,
        })
        .collect();
    set.into_iter().collect()
}

/// Whether the candidate's IDs can be the IDs the point consumes: same
/// column, or a key and a foreign key referring to the same primary key.
pub fn match_kinds(point: &InjectionPoint, candidate: &MsgInterval) -> bool {
    point.kind.same_domain(&candidate.kind)
}
