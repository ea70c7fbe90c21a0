use std::collections::{BTreeMap, BTreeSet};

use super::build::interval_for;
use super::{
    associate, match_kinds, optimize_set, Association, AuthzPolicy, CacheSpec, MsgError,
    MsgInterval, MsgIntervalSet, POLICY_FORMAT,
};
use crate::app::AppModel;
use crate::classify::{Classification, InjectionPoint, SqlOp};
use crate::sql::{covers_full_table, Condition, ValueSource};
use crate::taint::FlowFact;

/// Outcome of tracing a foreign-key interval back to primary-key intervals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Backtracked {
    pub intervals: Vec<MsgInterval>,
    pub incomplete: bool,
}

#[derive(Debug, Clone)]
enum PointState {
    Unassociated,
    Resolved {
        /// Matched, resolved and backtracked intervals before optimization.
        candidates: Vec<MsgInterval>,
        /// Ids of matched intervals that backtracking replaced.
        substituted: BTreeSet<String>,
        optimized: Vec<MsgInterval>,
        unrestricted: bool,
    },
}

/// Shared state of one policy construction: memoized interval and point
/// resolutions plus the cycle guard.
pub struct PolicyContext<'a> {
    model: &'a AppModel,
    classes: BTreeMap<String, Classification>,
    associations: Vec<Association>,
    resolved: BTreeMap<String, MsgInterval>,
    points: BTreeMap<InjectionPoint, PointState>,
    stack: Vec<String>,
    referenced: BTreeMap<String, MsgInterval>,
    diagnostics: BTreeSet<String>,
}

impl<'a> PolicyContext<'a> {
    pub fn new(
        model: &'a AppModel,
        facts: &[FlowFact],
        classifications: &[Classification],
    ) -> Self {
        let classes = classifications
            .iter()
            .map(|c| (c.endpoint.clone(), c.clone()))
            .collect();
        PolicyContext {
            model,
            classes,
            associations: associate(facts),
            resolved: BTreeMap::new(),
            points: BTreeMap::new(),
            stack: Vec::new(),
            referenced: BTreeMap::new(),
            diagnostics: BTreeSet::new(),
        }
    }

    fn enter(&mut self, key: String) -> Result<(), MsgError> {
        if let Some(pos) = self.stack.iter().position(|k| *k == key) {
            let mut chain = self.stack[pos..].to_vec();
            chain.push(key);
            return Err(MsgError::CyclicDependency(chain.join(" -> ")));
        }
        self.stack.push(key);
        Ok(())
    }

    fn leave(&mut self) {
        self.stack.pop();
    }

    /// Replaces dependency-fed conditions: dropped when the parent admits
    /// the whole table, otherwise turned into membership in the parent's
    /// intervals.
    pub fn resolve_dependence(&mut self, interval: &MsgInterval) -> Result<MsgInterval, MsgError> {
        if let Some(done) = self.resolved.get(&interval.id) {
            return Ok(done.clone());
        }
        self.enter(format!("interval {}", interval.id))?;
        let result = self.resolve_conditions(interval);
        self.leave();
        let resolved = result?;
        self.resolved.insert(interval.id.clone(), resolved.clone());
        Ok(resolved)
    }

    fn resolve_conditions(&mut self, interval: &MsgInterval) -> Result<MsgInterval, MsgError> {
        let mut out = interval.clone();
        let mut disjuncts: Vec<Vec<Condition>> =
            interval.reduced.disjuncts().map(<[_]>::to_vec).collect();
        for conds in &mut disjuncts {
            let mut kept = Vec::with_capacity(conds.len());
            for c in conds.drain(..) {
                if let Some(c) = self.resolve_condition(interval, c)? {
                    kept.push(c);
                }
            }
            *conds = kept;
        }
        let mut it = disjuncts.into_iter();
        out.reduced.retained = it.next().unwrap_or_default();
        out.reduced.alternatives = it.collect();
        Ok(out)
    }

    fn resolve_condition(
        &mut self,
        interval: &MsgInterval,
        mut c: Condition,
    ) -> Result<Option<Condition>, MsgError> {
        let schema = self.model.schema();
        let ep = self.model.endpoint(&interval.producer_endpoint);
        match c.value.clone() {
            ValueSource::SqlOutput { stmt, column } => {
                let parent = ep.and_then(|ep| {
                    let col = ep.stmt(&stmt)?.as_select()?.output_column(&column)?;
                    let kind = schema.resource_kind(&col.table, &col.column)?;
                    interval_for(ep, &stmt, &kind, schema)
                });
                // a parent output that is not a resource ID cannot be
                // bounded by an interval; the condition only widens away
                let Some(parent) = parent else {
                    return Ok(None);
                };
                let parent = self.resolve_dependence(&parent)?;
                if covers_full_table(&parent.reduced, true)? {
                    return Ok(None);
                }
                c.value = ValueSource::IntervalRef {
                    intervals: vec![parent.id.clone()],
                };
                self.referenced.insert(parent.id.clone(), parent);
                Ok(Some(c))
            }
            ValueSource::Param { name, .. } => {
                let Some(kind) = schema.resource_kind(&c.column.table, &c.column.column) else {
                    return Ok(None);
                };
                let point = InjectionPoint {
                    endpoint: interval.producer_endpoint.clone(),
                    param: name,
                    kind,
                    stmt: interval.stmt.clone(),
                    sql_op: SqlOp::Select,
                };
                match self.resolve_point(&point)? {
                    PointState::Unassociated => {
                        c.value = ValueSource::IntervalRef {
                            intervals: Vec::new(),
                        };
                        Ok(Some(c))
                    }
                    PointState::Resolved {
                        unrestricted: true, ..
                    } => Ok(None),
                    PointState::Resolved { optimized, .. } => {
                        c.value = ValueSource::IntervalRef {
                            intervals: optimized.iter().map(|i| i.id.clone()).collect(),
                        };
                        for i in optimized {
                            self.referenced.insert(i.id.clone(), i);
                        }
                        Ok(Some(c))
                    }
                }
            }
            // an unbindable value can only be treated as any value
            ValueSource::Unbound => Ok(None),
            _ => Ok(Some(c)),
        }
    }

    /// Replaces a foreign-key interval by the primary-key intervals guarding
    /// the INSERT that wrote the key. Keeps it, flagged, when no such chain
    /// exists.
    pub fn backtrack_fk(&mut self, interval: &MsgInterval) -> Result<Backtracked, MsgError> {
        if interval.kind.is_primary() {
            return Ok(Backtracked {
                intervals: vec![interval.clone()],
                incomplete: false,
            });
        }
        let inserts: Vec<InjectionPoint> = self
            .classes
            .values()
            .flat_map(|c| &c.injection_points)
            .filter(|p| {
                p.sql_op == SqlOp::Insert
                    && p.kind.table == interval.kind.table
                    && p.kind.column == interval.kind.column
            })
            .cloned()
            .collect();
        let mut found: Vec<MsgInterval> = Vec::new();
        for p in inserts {
            if let PointState::Resolved { candidates, .. } = self.resolve_point(&p)? {
                for c in candidates {
                    if !found.iter().any(|f| f.id == c.id) {
                        found.push(c);
                    }
                }
            }
        }
        if found.is_empty() {
            self.diagnostics.insert(format!(
                "interval {} over foreign key {} has no producer behind its inserts; kept as is",
                interval.id,
                interval.kind.qualified()
            ));
            let mut kept = interval.clone();
            kept.incomplete = true;
            return Ok(Backtracked {
                intervals: vec![kept],
                incomplete: true,
            });
        }
        Ok(Backtracked {
            intervals: found,
            incomplete: false,
        })
    }

    fn matched_intervals(&self, point: &InjectionPoint) -> Vec<MsgInterval> {
        let mut out: Vec<MsgInterval> = Vec::new();
        for a in &self.associations {
            if a.consumer_endpoint != point.endpoint || a.param != point.param {
                continue;
            }
            let Some(class) = self.classes.get(&a.producer_endpoint) else {
                continue;
            };
            if !class.role.creates_intervals() {
                continue;
            }
            let Some(ep) = self.model.endpoint(&a.producer_endpoint) else {
                continue;
            };
            for p in class
                .produced
                .iter()
                .filter(|p| p.return_field == a.return_field)
            {
                if let Some(i) = interval_for(ep, &p.stmt, &p.kind, self.model.schema()) {
                    if match_kinds(point, &i) && !out.iter().any(|o| o.id == i.id) {
                        out.push(i);
                    }
                }
            }
        }
        out
    }

    fn resolve_point(&mut self, point: &InjectionPoint) -> Result<PointState, MsgError> {
        if let Some(state) = self.points.get(point) {
            return Ok(state.clone());
        }
        self.enter(format!("point {}", point.id()))?;
        let result = self.resolve_point_inner(point);
        self.leave();
        let state = result?;
        self.points.insert(point.clone(), state.clone());
        Ok(state)
    }

    fn resolve_point_inner(&mut self, point: &InjectionPoint) -> Result<PointState, MsgError> {
        let matched = self.matched_intervals(point);
        if matched.is_empty() {
            return Ok(PointState::Unassociated);
        }
        let mut candidates: Vec<MsgInterval> = Vec::new();
        let mut substituted = BTreeSet::new();
        for m in matched {
            let resolved = self.resolve_dependence(&m)?;
            let back = self.backtrack_fk(&resolved)?;
            if !resolved.kind.is_primary() && !back.incomplete {
                substituted.insert(m.id.clone());
            }
            for i in back.intervals {
                if !candidates.iter().any(|c| c.id == i.id) {
                    candidates.push(i);
                }
            }
        }
        let optimized = optimize_set(candidates.clone());
        let mut unrestricted = false;
        for i in &optimized {
            unrestricted |= covers_full_table(&i.reduced, true)?;
        }
        Ok(PointState::Resolved {
            candidates,
            substituted,
            optimized,
            unrestricted,
        })
    }

    /// Resolves every injection point and assembles the policy.
    pub fn build(mut self) -> Result<AuthzPolicy, MsgError> {
        let mut all_points: Vec<InjectionPoint> = self
            .classes
            .values()
            .flat_map(|c| c.injection_points.iter().cloned())
            .collect();
        all_points.sort();
        all_points.dedup();

        let mut policy = AuthzPolicy {
            format: POLICY_FORMAT.to_string(),
            ..AuthzPolicy::empty()
        };
        let mut specs: BTreeMap<(String, String), CacheSpec> = BTreeMap::new();
        for point in all_points {
            match self.resolve_point(&point)? {
                PointState::Unassociated => {
                    self.diagnostics.insert(format!(
                        "injection point {point} has no associated producer; requests are denied"
                    ));
                    policy.unassociated_points.push(point);
                }
                PointState::Resolved {
                    candidates,
                    substituted,
                    optimized,
                    unrestricted,
                } => {
                    if !unrestricted {
                        self.add_cache_specs(&point, &candidates, &substituted, &mut specs);
                    }
                    policy.sets.push(MsgIntervalSet {
                        point,
                        intervals: optimized,
                        unrestricted,
                    });
                }
            }
        }
        policy.producer_cache_specs = specs.into_values().collect();
        policy.referenced = self.referenced.into_values().collect();
        policy.diagnostics = self.diagnostics.into_iter().collect();
        Ok(policy)
    }

    /// A producer field may fill a point's cache only when every value it
    /// can carry comes from an interval of that point's set.
    fn add_cache_specs(
        &self,
        point: &InjectionPoint,
        candidates: &[MsgInterval],
        substituted: &BTreeSet<String>,
        specs: &mut BTreeMap<(String, String), CacheSpec>,
    ) {
        for a in &self.associations {
            if a.consumer_endpoint != point.endpoint || a.param != point.param {
                continue;
            }
            let Some(class) = self.classes.get(&a.producer_endpoint) else {
                continue;
            };
            let Some(ep) = self.model.endpoint(&a.producer_endpoint) else {
                continue;
            };
            let sources: Vec<_> = class
                .produced
                .iter()
                .filter(|p| p.return_field == a.return_field)
                .collect();
            let covered = !sources.is_empty()
                && sources.iter().all(|p| {
                    let id = MsgInterval::interval_id(&a.producer_endpoint, &p.stmt, &p.kind);
                    candidates.iter().any(|c| c.id == id) && !substituted.contains(&id)
                })
                && crate::taint::field_is_sql_only(ep, &a.return_field);
            if !covered {
                continue;
            }
            let spec = specs
                .entry((a.producer_endpoint.clone(), a.return_field.clone()))
                .or_insert_with(|| CacheSpec {
                    producer_endpoint: a.producer_endpoint.clone(),
                    return_field: a.return_field.clone(),
                    kind: sources[0].kind.clone(),
                    points: Vec::new(),
                });
            let id = point.id();
            if !spec.points.contains(&id) {
                spec.points.push(id);
                spec.points.sort();
            }
        }
    }
}

/// Builds the authorization policy for an analyzed app.
pub fn build_policy(
    model: &AppModel,
    facts: &[FlowFact],
    classifications: &[Classification],
) -> Result<AuthzPolicy, MsgError> {
    PolicyContext::new(model, facts, classifications).build()
}
