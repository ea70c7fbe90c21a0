use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fixture_users, interpret, HarnessError, Response};
use crate::app::AppModel;
use crate::runtime::{Basis, Decision, Enforcer, UserContext, Verdict};
use crate::schema::Schema;
use crate::sql::{Literal, Scalar};
use crate::store::{Query, ResourceStore, Row, StoreError, WriteOp, WriteOutcome};

pub const REPLAY_FORMAT: &str = "bolaz-replay/1";

/// A scripted multi-session sequence. A session names a fixture user.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub steps: Vec<Step>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Scenario(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub session: String,
    pub call: String,
    #[serde(default)]
    pub args: BTreeMap<String, Literal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub session: String,
    pub call: String,
    pub verdict: Verdict,
    pub decisions: Vec<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<Response>,
    /// IDs the response added to the cache.
    #[serde(default)]
    pub cached: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub format: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// Requests that ran.
    pub executed: usize,
    /// Requests stopped by a deny.
    pub blocked: usize,
    pub allowed: usize,
    pub denied: usize,
    pub by_basis: BTreeMap<Basis, usize>,
    /// Store reads made while authorizing.
    pub authz_store_reads: u64,
}

impl ReplayReport {
    fn assemble(seed: u64, mut steps: Vec<StepRecord>, authz_store_reads: u64) -> Self {
        steps.sort_by_key(|s| s.index);
        let mut by_basis = BTreeMap::new();
        let (mut allowed, mut denied) = (0, 0);
        for d in steps.iter().flat_map(|s| &s.decisions) {
            *by_basis.entry(d.basis).or_insert(0) += 1;
            match d.verdict {
                Verdict::Allow => allowed += 1,
                Verdict::Deny => denied += 1,
            }
        }
        let blocked = steps.iter().filter(|s| s.verdict == Verdict::Deny).count();
        ReplayReport {
            format: REPLAY_FORMAT.to_string(),
            seed,
            executed: steps.len() - blocked,
            blocked,
            steps,
            allowed,
            denied,
            by_basis,
            authz_store_reads,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// (step index, verdict) pairs in step order.
    pub fn verdicts(&self) -> Vec<(usize, Verdict)> {
        self.steps
            .iter()
            .flat_map(|s| s.decisions.iter().map(move |d| (s.index, d.verdict)))
            .collect()
    }
}

/// Counts the reads passing through to the wrapped store.
struct CountingStore<'a> {
    inner: &'a dyn ResourceStore,
    reads: AtomicU64,
}

impl ResourceStore for CountingStore<'_> {
    fn schema(&self) -> &Schema {
        self.inner.schema()
    }

    fn enumerate(&self, table: &str) -> Result<Vec<Row>, StoreError> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.inner.enumerate(table)
    }

    fn select(&self, query: &Query) -> Result<Vec<Vec<Option<Scalar>>>, StoreError> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        self.inner.select(query)
    }

    fn apply(&self, op: &WriteOp) -> Result<WriteOutcome, StoreError> {
        self.inner.apply(op)
    }
}

/// Runs scenario steps through the enforcer, then the app.
pub struct Replayer<'a> {
    model: &'a AppModel,
    enforcer: &'a Enforcer,
    store: &'a dyn ResourceStore,
    authz_store: CountingStore<'a>,
    users: BTreeMap<String, UserContext>,
}

impl<'a> Replayer<'a> {
    pub fn new(model: &'a AppModel, enforcer: &'a Enforcer, store: &'a dyn ResourceStore) -> Self {
        let users = fixture_users(model)
            .into_iter()
            .map(|u| (u.user_id.clone(), u))
            .collect();
        Replayer {
            model,
            enforcer,
            store,
            authz_store: CountingStore {
                inner: store,
                reads: AtomicU64::new(0),
            },
            users,
        }
    }

    pub fn user(&self, session: &str) -> Option<&UserContext> {
        self.users.get(session)
    }

    pub fn authz_store_reads(&self) -> u64 {
        self.authz_store.reads.load(Ordering::Relaxed)
    }

    /// Rejects steps naming unknown sessions or endpoints.
    pub fn check(&self, scenario: &Scenario) -> Result<(), HarnessError> {
        for (i, s) in scenario.steps.iter().enumerate() {
            if !self.users.contains_key(&s.session) {
                return Err(HarnessError::DanglingReference(format!(
                    "step {i}: unknown session `{}`",
                    s.session
                )));
            }
            if self.model.endpoint(&s.call).is_none() {
                return Err(HarnessError::DanglingReference(format!(
                    "step {i}: unknown endpoint `{}`",
                    s.call
                )));
            }
        }
        Ok(())
    }

    /// Authorizes and, if allowed, executes one step. Enforcement errors
    /// abort; application errors are recorded on the step.
    pub fn step(&self, index: usize, step: &Step) -> Result<StepRecord, HarnessError> {
        let base = self.users.get(&step.session).ok_or_else(|| {
            HarnessError::DanglingReference(format!("unknown session `{}`", step.session))
        })?;
        let user = UserContext {
            session_id: step.session.clone(),
            ..base.clone()
        };
        let decisions =
            self.enforcer
                .authorize_request(&user, &step.call, &step.args, &self.authz_store)?;
        let verdict = if decisions.iter().all(Decision::allowed) {
            Verdict::Allow
        } else {
            Verdict::Deny
        };
        let mut record = StepRecord {
            index,
            session: step.session.clone(),
            call: step.call.clone(),
            verdict,
            decisions,
            response: None,
            cached: 0,
            error: None,
        };
        if verdict == Verdict::Deny {
            return Ok(record);
        }
        match interpret(self.model, &step.call, &user, &step.args, self.store) {
            Ok(resp) => {
                if self.enforcer.caches(&step.call) {
                    record.cached = self
                        .enforcer
                        .on_producer_response(&user, &step.call, &resp.fields)?
                        .count();
                }
                record.response = Some(resp);
            }
            Err(HarnessError::Store(e)) => return Err(HarnessError::Store(e)),
            Err(e) => record.error = Some(e.to_string()),
        }
        Ok(record)
    }
}

/// Replays a scenario in order, one step at a time.
pub fn enforce_and_replay(
    model: &AppModel,
    enforcer: &Enforcer,
    store: &dyn ResourceStore,
    scenario: &Scenario,
) -> Result<ReplayReport, HarnessError> {
    let r = Replayer::new(model, enforcer, store);
    r.check(scenario)?;
    let steps = scenario
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| r.step(i, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ReplayReport::assemble(
        scenario.seed,
        steps,
        r.authz_store_reads(),
    ))
}

/// Replays each session on its own thread, keeping each session's steps in
/// order.
pub fn stress_replay(
    model: &AppModel,
    enforcer: &Enforcer,
    store: &dyn ResourceStore,
    scenario: &Scenario,
) -> Result<ReplayReport, HarnessError> {
    let r = Replayer::new(model, enforcer, store);
    r.check(scenario)?;
    let mut sessions: BTreeMap<&str, Vec<(usize, &Step)>> = BTreeMap::new();
    for (i, s) in scenario.steps.iter().enumerate() {
        sessions.entry(&s.session).or_default().push((i, s));
    }
    let results: Vec<Result<Vec<StepRecord>, HarnessError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sessions
            .into_values()
            .map(|steps| {
                let r = &r;
                scope.spawn(move || steps.into_iter().map(|(i, s)| r.step(i, s)).collect())
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replay thread panicked"))
            .collect()
    });
    let mut steps = Vec::new();
    for res in results {
        steps.extend(res?);
    }
    Ok(ReplayReport::assemble(
        scenario.seed,
        steps,
        r.authz_store_reads(),
    ))
}

/// A random scenario over the fixture users and non-admin endpoints.
/// Guarded parameters draw from every existing ID of their kind, so own
/// and foreign IDs are mixed; other parameters use their example.
pub fn random_scenario(
    model: &AppModel,
    enforcer: &Enforcer,
    store: &dyn ResourceStore,
    seed: u64,
    len: usize,
) -> Result<Scenario, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = fixture_users(model);
    let mut domains: BTreeMap<(String, String), Vec<Scalar>> = BTreeMap::new();
    for t in store.schema().tables() {
        let rows = store.enumerate(&t.name)?;
        let ids = rows
            .iter()
            .filter_map(|r| r.get(&t.primary_key).cloned())
            .collect();
        domains.insert((t.name.clone(), t.primary_key.clone()), ids);
    }
    let pool = |ep: &str, param: &str| -> Option<&Vec<Scalar>> {
        let pt = enforcer.points_for(ep, param).first()?;
        let (t, c) = pt.kind.domain();
        domains
            .get(&(t.to_string(), c.to_string()))
            .filter(|ids| !ids.is_empty())
    };
    let endpoints: Vec<_> = model
        .analyzed_endpoints()
        .filter(|e| {
            e.endpoint
                .params
                .iter()
                .all(|p| p.example.is_some() || pool(e.id(), &p.name).is_some())
        })
        .collect();
    if users.is_empty() || endpoints.is_empty() {
        return Ok(Scenario {
            seed,
            steps: Vec::new(),
        });
    }
    let mut steps = Vec::with_capacity(len);
    for _ in 0..len {
        let user = users.choose(&mut rng).expect("non-empty");
        let ep = endpoints.choose(&mut rng).expect("non-empty");
        let mut args = BTreeMap::new();
        for p in &ep.endpoint.params {
            let v = match (pool(ep.id(), &p.name), &p.example) {
                (Some(ids), _) if rng.gen_bool(0.95) => {
                    Literal::Scalar(ids.choose(&mut rng).expect("non-empty").clone())
                }
                (Some(ids), _) => Literal::Scalar(match &ids[0] {
                    Scalar::Int(_) => Scalar::Int(rng.gen_range(100_000..200_000)),
                    Scalar::Str(_) => Scalar::Str(format!("missing-{}", rng.gen::<u32>())),
                }),
                (None, Some(ex)) => ex.clone(),
                (None, None) => unreachable!("endpoint filtered above"),
            };
            args.insert(p.name.clone(), v);
        }
        steps.push(Step {
            session: user.user_id.clone(),
            call: ep.id().to_string(),
            args,
        });
    }
    Ok(Scenario { seed, steps })
}
