use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fixture_users, interpret, HarnessError, Ownership, StmtOutcome};
use crate::app::AppModel;
use crate::classify::{InjectionPoint, SqlOp};
use crate::msg::AuthzPolicy;
use crate::runtime::{CacheConfig, Enforcer, IdCache, UserContext};
use crate::schema::ResourceIdKind;
use crate::sql::{Literal, Scalar};
use crate::store::{InMemoryStore, ResourceStore};
use crate::taint::{server_flows, FlowFact};

/// How an attacker gets hold of the foreign ID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ThreatMode {
    /// IDs are sequential integers; enumeration finds them.
    #[serde(rename = "UASBF")]
    Uasbf,
    /// A producer hands the foreign ID to the attacker.
    #[serde(rename = "BOPLA")]
    Bopla,
    /// Only an admin-only endpoint exposes the ID.
    #[serde(rename = "BFLA")]
    Bfla,
    Generic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub victim_user: String,
    pub attacker_user: String,
    /// The victim's ID the attacker passed.
    pub value: Scalar,
    /// The attacker's own ID, replayed as a baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub own_value: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub own_outcome: Option<StmtOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unprotected_outcome: Option<StmtOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub point: InjectionPoint,
    pub mode: ThreatMode,
    pub evidence: Evidence,
    /// The foreign replay succeeded; `scan` reports nothing else.
    pub confirmed: bool,
}

/// Foreign replays per point.
const MAX_ATTEMPTS: usize = 16;

struct Scanner<'a> {
    model: &'a AppModel,
    store: &'a InMemoryStore,
    users: Vec<UserContext>,
    ownership: Ownership,
    /// (endpoint, param) -> kinds the parameter reaches
    param_kinds: BTreeMap<(String, String), BTreeSet<ResourceIdKind>>,
}

impl Scanner<'_> {
    fn owned(&self, user: &UserContext, kind: &ResourceIdKind) -> BTreeSet<Scalar> {
        self.ownership.values(&user.user_id, kind)
    }

    /// Arguments for `endpoint` as `user`, with `fixed` taking precedence.
    /// Unfixed parameters use their example or the user's first owned ID of
    /// the kind they reach.
    fn fill_args(
        &self,
        endpoint: &str,
        user: &UserContext,
        fixed: &BTreeMap<String, Literal>,
    ) -> Option<BTreeMap<String, Literal>> {
        let ep = self.model.endpoint(endpoint)?;
        let mut args = BTreeMap::new();
        for p in &ep.endpoint.params {
            let v = if let Some(v) = fixed.get(&p.name) {
                v.clone()
            } else if let Some(ex) = &p.example {
                ex.clone()
            } else {
                let kinds = self
                    .param_kinds
                    .get(&(endpoint.to_string(), p.name.clone()))?;
                let own = kinds
                    .iter()
                    .find_map(|k| self.owned(user, k).into_iter().next())?;
                Literal::Scalar(own)
            };
            args.insert(p.name.clone(), v);
        }
        Some(args)
    }

    /// Runs `point` on a copy of the store, so replays never see each
    /// other's writes.
    fn replay(
        &self,
        point: &InjectionPoint,
        user: &UserContext,
        value: &Scalar,
    ) -> Result<StmtOutcome, String> {
        let fixed = BTreeMap::from([(point.param.clone(), Literal::Scalar(value.clone()))]);
        let args = self
            .fill_args(&point.endpoint, user, &fixed)
            .ok_or_else(|| format!("cannot fill the arguments of `{}`", point.endpoint))?;
        let store = self.store.clone();
        let resp = interpret(self.model, &point.endpoint, user, &args, &store)
            .map_err(|e| e.to_string())?;
        resp.outcome(&point.stmt)
            .cloned()
            .ok_or_else(|| format!("statement `{}` did not run", point.stmt))
    }

    /// Whether some endpoint, called by `user`, returns `value`.
    fn exposed_by(&self, user: &UserContext, value: &Scalar, admin: bool) -> bool {
        self.model
            .endpoints()
            .iter()
            .filter(|e| e.endpoint.admin_only == admin)
            .any(|e| {
                let Some(args) = self.fill_args(e.id(), user, &BTreeMap::new()) else {
                    return false;
                };
                let store = self.store.clone();
                interpret(self.model, e.id(), user, &args, &store).is_ok_and(|r| r.exposes(value))
            })
    }

    fn mode(&self, kind: &ResourceIdKind, attacker: &UserContext, value: &Scalar) -> ThreatMode {
        if self.sequential(kind) {
            ThreatMode::Uasbf
        } else if self.exposed_by(attacker, value, false) {
            ThreatMode::Bopla
        } else if self.exposed_by(attacker, value, true) {
            ThreatMode::Bfla
        } else {
            ThreatMode::Generic
        }
    }

    /// Integer IDs with no gap wider than 2.
    fn sequential(&self, kind: &ResourceIdKind) -> bool {
        let (table, column) = kind.domain();
        let Ok(rows) = self.store.enumerate(table) else {
            return false;
        };
        let mut ids: Vec<i64> = Vec::new();
        for r in &rows {
            match r.get(column).and_then(Scalar::as_int) {
                Some(v) => ids.push(v),
                None => return false,
            }
        }
        ids.sort_unstable();
        ids.len() >= 2 && ids.windows(2).all(|w| w[1] - w[0] <= 2)
    }
}

fn succeeded(point: &InjectionPoint, outcome: &StmtOutcome) -> bool {
    match point.sql_op {
        SqlOp::Select => outcome.rows >= 1,
        _ => outcome.affected >= 1,
    }
}

/// Replays each guarded point with another user's ID and reports the ones
/// the unprotected app accepts, at most one per point. Attempts that fail
/// are not reported. Deterministic for a given seed.
pub fn scan(
    model: &AppModel,
    policy: &AuthzPolicy,
    store: &InMemoryStore,
    seed: u64,
) -> Result<Vec<Finding>, HarnessError> {
    let users = fixture_users(model);
    if users.len() < 2 {
        return Err(HarnessError::InsufficientSeed(format!(
            "{} fixture user(s); at least 2 are needed",
            users.len()
        )));
    }
    let mut param_kinds: BTreeMap<(String, String), BTreeSet<ResourceIdKind>> = BTreeMap::new();
    for f in server_flows(model) {
        if let FlowFact::ParamToSql {
            endpoint,
            param,
            position,
            ..
        } = f
        {
            let c = position.column();
            if let Some(k) = store.schema().resource_kind(&c.table, &c.column) {
                param_kinds.entry((endpoint, param)).or_default().insert(k);
            }
        }
    }
    let scanner = Scanner {
        model,
        store,
        ownership: Ownership::compute(model, &users, store)?,
        users,
        param_kinds,
    };
    // intervals stand in for ownership on tables no claim reaches
    let enforcer = Enforcer::new(
        policy.clone(),
        store.schema().clone(),
        IdCache::new(CacheConfig::default()),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut findings = Vec::new();
    let mut targets: Vec<(&InjectionPoint, bool)> = policy
        .restricted_sets()
        .map(|s| (&s.point, true))
        .chain(policy.unassociated_points.iter().map(|p| (p, false)))
        .collect();
    targets.sort();
    let mut seeded_points = 0;
    for (point, restricted) in targets {
        let mut owned: Vec<(&UserContext, BTreeSet<Scalar>)> = Vec::new();
        for u in &scanner.users {
            let values = if scanner.ownership.anchors(&point.kind) || !restricted {
                scanner.owned(u, &point.kind)
            } else {
                let set = policy.set_for(point).expect("restricted point has a set");
                enforcer.evaluate_set(set, u, store)?.unwrap_or_default()
            };
            owned.push((u, values));
        }
        if owned.iter().filter(|(_, v)| !v.is_empty()).count() < 2 {
            continue;
        }
        seeded_points += 1;
        let mut attempts: Vec<(usize, usize, Scalar)> = Vec::new();
        for a in 0..owned.len() {
            for v in (0..owned.len()).filter(|v| *v != a) {
                attempts.extend(
                    owned[v]
                        .1
                        .difference(&owned[a].1)
                        .map(|x| (a, v, x.clone())),
                );
            }
        }
        attempts.shuffle(&mut rng);
        // keep the successful attempt with the strongest mode
        let mut best: Option<Finding> = None;
        for (a, v, value) in attempts.into_iter().take(MAX_ATTEMPTS) {
            let (attacker, mine) = &owned[a];
            let Ok(outcome) = scanner.replay(point, attacker, &value) else {
                continue;
            };
            if !succeeded(point, &outcome) {
                continue;
            }
            let mode = scanner.mode(&point.kind, attacker, &value);
            if best.as_ref().is_some_and(|b| b.mode <= mode) {
                continue;
            }
            let own_value = mine.iter().next().cloned();
            let own_outcome = own_value
                .as_ref()
                .and_then(|o| scanner.replay(point, attacker, o).ok());
            best = Some(Finding {
                point: point.clone(),
                mode,
                evidence: Evidence {
                    victim_user: owned[v].0.user_id.clone(),
                    attacker_user: attacker.user_id.clone(),
                    value,
                    own_value,
                    own_outcome,
                    unprotected_outcome: Some(outcome),
                },
                confirmed: true,
            });
            if mode == ThreatMode::Uasbf {
                break;
            }
        }
        findings.extend(best);
    }
    if seeded_points == 0
        && (policy.restricted_sets().next().is_some() || !policy.unassociated_points.is_empty())
    {
        return Err(HarnessError::InsufficientSeed(
            "no guarded resource kind is owned by two or more users".to_string(),
        ));
    }
    Ok(findings)
}
