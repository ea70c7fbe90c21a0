use std::collections::{BTreeSet, HashMap};

use super::{AuthzError, UserContext};
use crate::msg::MsgInterval;
use crate::schema::ResourceIdKind;
use crate::sql::{ColumnRef, CompareOp, ReducedSelect, Scalar, ValueSource};
use crate::store::{Predicate, Query, ResourceStore};

/// Evaluates intervals for one user against a store. Referenced intervals
/// are evaluated at most once per evaluator.
pub struct Evaluator<'a> {
    referenced: &'a HashMap<String, MsgInterval>,
    user: &'a UserContext,
    store: &'a dyn ResourceStore,
    memo: HashMap<String, BTreeSet<Scalar>>,
    stack: Vec<String>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        referenced: &'a HashMap<String, MsgInterval>,
        user: &'a UserContext,
        store: &'a dyn ResourceStore,
    ) -> Self {
        Evaluator {
            referenced,
            user,
            store,
            memo: HashMap::new(),
            stack: Vec::new(),
        }
    }

    /// Every value of the interval's kind column admitted for this user.
    pub fn values(&mut self, interval: &MsgInterval) -> Result<BTreeSet<Scalar>, AuthzError> {
        self.select(&interval.reduced, &interval.kind, None)
    }

    /// Whether `value` is admitted, with the value pushed into the query.
    pub fn contains(&mut self, interval: &MsgInterval, value: &Scalar) -> Result<bool, AuthzError> {
        Ok(!self
            .select(&interval.reduced, &interval.kind, Some(value))?
            .is_empty())
    }

    /// Runs a reduced select projected on `kind`, optionally pinned to one
    /// value of that column.
    pub fn select(
        &mut self,
        reduced: &ReducedSelect,
        kind: &ResourceIdKind,
        pinned: Option<&Scalar>,
    ) -> Result<BTreeSet<Scalar>, AuthzError> {
        let column = ColumnRef::of_kind(kind);
        let mut filter = Vec::new();
        for conds in reduced.disjuncts() {
            let mut preds = Vec::with_capacity(conds.len() + 1);
            if let Some(v) = pinned {
                preds.push(Predicate::eq(column.clone(), v.clone()));
            }
            for c in conds {
                let values = match &c.value {
                    ValueSource::Constant(lit) => lit.values(),
                    ValueSource::TokenDerived { claim } => vec![self
                        .user
                        .claims
                        .get(claim)
                        .cloned()
                        .ok_or_else(|| AuthzError::MissingClaim(claim.clone()))?],
                    ValueSource::IntervalRef { intervals } => {
                        let mut all = BTreeSet::new();
                        for id in intervals {
                            all.extend(self.referenced_values(id)?);
                        }
                        all.into_iter().collect()
                    }
                    other => {
                        return Err(AuthzError::UnresolvedCondition(format!(
                            "{} {} {other:?}",
                            c.column, c.op
                        )))
                    }
                };
                let op = match (&c.value, c.op) {
                    (ValueSource::IntervalRef { .. }, CompareOp::Eq) => CompareOp::In,
                    (_, op) => op,
                };
                preds.push(Predicate::new(c.column.clone(), op, values));
            }
            filter.push(preds);
        }
        let mut query = Query::new(
            reduced.base.tables.clone(),
            reduced.base.join_conditions.clone(),
            vec![column],
        )
        .with_filter(filter);
        if pinned.is_some() {
            query.limit = Some(1);
        }
        let rows = self
            .store
            .select(&query)
            .map_err(AuthzError::StoreUnavailable)?;
        Ok(rows
            .into_iter()
            .filter_map(|mut r| r.pop().flatten())
            .collect())
    }

    fn referenced_values(&mut self, id: &str) -> Result<BTreeSet<Scalar>, AuthzError> {
        if let Some(done) = self.memo.get(id) {
            return Ok(done.clone());
        }
        if self.stack.iter().any(|s| s == id) {
            return Err(AuthzError::CyclicReference(id.to_string()));
        }
        let interval = self
            .referenced
            .get(id)
            .ok_or_else(|| AuthzError::UnknownInterval(id.to_string()))?;
        self.stack.push(id.to_string());
        let result = self.values(interval);
        self.stack.pop();
        let values = result?;
        self.memo.insert(id.to_string(), values.clone());
        Ok(values)
    }
}
