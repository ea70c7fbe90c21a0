//! Request-time enforcement of an authorization policy: producer responses
//! fill a per-user ID cache, consumer parameters are checked against the
//! cache and then against the store.

mod cache;
mod eval;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::InjectionPoint;
use crate::msg::{AuthzPolicy, MsgInterval, MsgIntervalSet};
use crate::schema::{ScalarKind, Schema};
use crate::sql::{Literal, Scalar};
use crate::store::{ResourceStore, StoreError};

pub use cache::{CacheConfig, Clock, IdCache, ManualClock, SystemClock};
pub use eval::Evaluator;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthzError {
    #[error("endpoint `{0}` has no producer cache spec")]
    UnknownEndpoint(String),
    #[error("injection point `{0}` is not in the policy")]
    UnknownPoint(String),
    #[error("interval `{0}` is referenced but not defined")]
    UnknownInterval(String),
    #[error("user token lacks claim `{0}`")]
    MissingClaim(String),
    #[error("interval condition cannot be evaluated: {0}")]
    UnresolvedCondition(String),
    #[error("interval `{0}` references itself")]
    CyclicReference(String),
    #[error("store unavailable: {0}")]
    StoreUnavailable(StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UserContext {
    pub user_id: String,
    #[serde(default)]
    pub claims: BTreeMap<String, Scalar>,
    #[serde(default)]
    pub session_id: String,
}

impl UserContext {
    pub fn new(user_id: impl Into<String>) -> Self {
        UserContext {
            user_id: user_id.into(),
            ..Default::default()
        }
    }

    pub fn with_claim(mut self, claim: impl Into<String>, value: impl Into<Scalar>) -> Self {
        self.claims.insert(claim.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Allow,
    Deny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Basis {
    CacheHit,
    StoreHit,
    NoMatch,
    Unassociated,
    Unrestricted,
}

impl Basis {
    pub fn verdict(self) -> Verdict {
        match self {
            Basis::CacheHit | Basis::StoreHit | Basis::Unrestricted => Verdict::Allow,
            Basis::NoMatch | Basis::Unassociated => Verdict::Deny,
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub basis: Basis,
    pub point: InjectionPoint,
    pub value: Scalar,
}

impl Decision {
    fn new(basis: Basis, point: &InjectionPoint, value: &Scalar) -> Self {
        Decision {
            verdict: basis.verdict(),
            basis,
            point: point.clone(),
            value: value.clone(),
        }
    }

    pub fn allowed(&self) -> bool {
        self.verdict == Verdict::Allow
    }
}

/// Values inserted into the cache by one producer response, by point id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheDelta {
    pub inserted: BTreeMap<String, Vec<Scalar>>,
}

impl CacheDelta {
    pub fn is_empty(&self) -> bool {
        self.inserted.is_empty()
    }

    pub fn count(&self) -> usize {
        self.inserted.values().map(Vec::len).sum()
    }
}

enum PointPolicy {
    Set(usize),
    Unassociated,
}

/// A producer field: its name, the points it feeds and the typed kind column.
type FieldSpec = (String, Vec<String>, Option<ScalarKind>);

/// Policy indexed for lookups plus the ID cache. Shared across threads by
/// reference; nothing is locked while the store is queried.
pub struct Enforcer {
    policy: AuthzPolicy,
    schema: Schema,
    points: HashMap<String, PointPolicy>,
    by_param: BTreeMap<(String, String), Vec<InjectionPoint>>,
    /// producer endpoint -> fields
    specs: HashMap<String, Vec<FieldSpec>>,
    referenced: HashMap<String, MsgInterval>,
    cache: IdCache,
}

impl Enforcer {
    pub fn new(policy: AuthzPolicy, schema: Schema, cache: IdCache) -> Self {
        let mut points = HashMap::new();
        let mut by_param: BTreeMap<(String, String), Vec<InjectionPoint>> = BTreeMap::new();
        for (i, s) in policy.sets.iter().enumerate() {
            points.insert(s.point.id(), PointPolicy::Set(i));
        }
        for p in &policy.unassociated_points {
            points.insert(p.id(), PointPolicy::Unassociated);
        }
        for p in policy.points() {
            by_param
                .entry((p.endpoint.clone(), p.param.clone()))
                .or_default()
                .push(p.clone());
        }
        for v in by_param.values_mut() {
            v.sort();
        }
        let mut specs: HashMap<String, Vec<_>> = HashMap::new();
        for s in &policy.producer_cache_specs {
            let ty = schema
                .table(&s.kind.table)
                .and_then(|t| t.column_types.get(&s.kind.column).copied());
            specs.entry(s.producer_endpoint.clone()).or_default().push((
                s.return_field.clone(),
                s.points.clone(),
                ty,
            ));
        }
        let referenced = policy
            .referenced
            .iter()
            .map(|i| (i.id.clone(), i.clone()))
            .collect();
        Enforcer {
            policy,
            schema,
            points,
            by_param,
            specs,
            referenced,
            cache,
        }
    }

    pub fn policy(&self) -> &AuthzPolicy {
        &self.policy
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn cache(&self) -> &IdCache {
        &self.cache
    }

    /// Whether responses of `endpoint` feed the cache.
    pub fn caches(&self, endpoint: &str) -> bool {
        self.specs.contains_key(endpoint)
    }

    /// Points guarding one parameter of an endpoint, in policy order.
    pub fn points_for(&self, endpoint: &str, param: &str) -> &[InjectionPoint] {
        self.by_param
            .get(&(endpoint.to_string(), param.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Caches the resource IDs a producer returned to `user`.
    pub fn on_producer_response(
        &self,
        user: &UserContext,
        endpoint: &str,
        fields: &BTreeMap<String, Vec<Scalar>>,
    ) -> Result<CacheDelta, AuthzError> {
        let specs = self
            .specs
            .get(endpoint)
            .ok_or_else(|| AuthzError::UnknownEndpoint(endpoint.to_string()))?;
        let mut delta = CacheDelta::default();
        for (field, point_ids, ty) in specs {
            let Some(values) = fields.get(field) else {
                continue;
            };
            let values: Vec<Scalar> = values.iter().filter(|v| v.fits(*ty)).cloned().collect();
            if values.is_empty() {
                continue;
            }
            for id in point_ids {
                self.cache
                    .insert_all(&user.user_id, id, values.iter().cloned());
                delta
                    .inserted
                    .entry(id.clone())
                    .or_default()
                    .extend(values.iter().cloned());
            }
        }
        Ok(delta)
    }

    /// Decides whether `user` may pass `value` into `point`.
    pub fn authorize(
        &self,
        user: &UserContext,
        point: &InjectionPoint,
        value: &Scalar,
        store: &dyn ResourceStore,
    ) -> Result<Decision, AuthzError> {
        let id = point.id();
        let set = match self.points.get(&id) {
            None => return Err(AuthzError::UnknownPoint(id)),
            Some(PointPolicy::Unassociated) => {
                return Ok(Decision::new(Basis::Unassociated, point, value))
            }
            Some(PointPolicy::Set(i)) => &self.policy.sets[*i],
        };
        if set.unrestricted {
            return Ok(Decision::new(Basis::Unrestricted, point, value));
        }
        if self.cache.contains(&user.user_id, &id, value) {
            return Ok(Decision::new(Basis::CacheHit, point, value));
        }
        let mut eval = Evaluator::new(&self.referenced, user, store);
        for interval in &set.intervals {
            if eval.contains(interval, value)? {
                return Ok(Decision::new(Basis::StoreHit, point, value));
            }
        }
        Ok(Decision::new(Basis::NoMatch, point, value))
    }

    /// Authorizes every value of every guarded argument of a request. The
    /// request may proceed only if all decisions allow it.
    pub fn authorize_request(
        &self,
        user: &UserContext,
        endpoint: &str,
        args: &BTreeMap<String, Literal>,
        store: &dyn ResourceStore,
    ) -> Result<Vec<Decision>, AuthzError> {
        let mut out = Vec::new();
        for (param, arg) in args {
            for point in self.points_for(endpoint, param) {
                for v in arg.values() {
                    out.push(self.authorize(user, point, &v, store)?);
                }
            }
        }
        Ok(out)
    }

    /// Every value an interval admits for `user`.
    pub fn evaluate_interval(
        &self,
        interval: &MsgInterval,
        user: &UserContext,
        store: &dyn ResourceStore,
    ) -> Result<BTreeSet<Scalar>, AuthzError> {
        Evaluator::new(&self.referenced, user, store).values(interval)
    }

    /// Union of the values admitted by a point's intervals; `None` for
    /// unrestricted points.
    pub fn evaluate_set(
        &self,
        set: &MsgIntervalSet,
        user: &UserContext,
        store: &dyn ResourceStore,
    ) -> Result<Option<BTreeSet<Scalar>>, AuthzError> {
        if set.unrestricted {
            return Ok(None);
        }
        let mut eval = Evaluator::new(&self.referenced, user, store);
        let mut all = BTreeSet::new();
        for i in &set.intervals {
            all.extend(eval.values(i)?);
        }
        Ok(Some(all))
    }
}

/// Evaluates one interval of `policy` for `user` without an enforcer.
pub fn evaluate_interval(
    policy: &AuthzPolicy,
    interval: &MsgInterval,
    user: &UserContext,
    store: &dyn ResourceStore,
) -> Result<BTreeSet<Scalar>, AuthzError> {
    let referenced = policy
        .referenced
        .iter()
        .map(|i| (i.id.clone(), i.clone()))
        .collect();
    Evaluator::new(&referenced, user, store).values(interval)
}
