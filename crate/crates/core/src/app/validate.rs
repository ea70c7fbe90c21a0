use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{AppModel, HandlerStmt};

/// Non-fatal finding about an app model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: String,
    pub message: String,
}

impl Diagnostic {
    fn new(code: &str, message: String) -> Self {
        Diagnostic {
            code: code.to_string(),
            message,
        }
    }
}

/// Warnings about unused statements, unreachable pages and navigation cycles.
pub fn validate_app(model: &AppModel) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for ep in model.endpoints() {
        let executed: BTreeSet<&str> = ep
            .handler
            .iter()
            .filter_map(|s| match s {
                HandlerStmt::ExecSql { stmt, .. } => Some(stmt.as_str()),
                _ => None,
            })
            .collect();
        for s in &ep.sql {
            if !executed.contains(s.id.as_str()) {
                out.push(Diagnostic::new(
                    "unused-statement",
                    format!(
                        "endpoint `{}`: statement `{}` is never executed",
                        ep.id(),
                        s.id
                    ),
                ));
            }
        }
    }

    let pages = model.pages();
    let mut links: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for p in pages {
        let targets = links.entry(p.id.as_str()).or_default();
        for el in &p.elements {
            if let Some(nav) = el.navigation() {
                targets.insert(nav.target_page.as_str());
            }
        }
    }
    let targeted: BTreeSet<&str> = links.values().flatten().copied().collect();
    for p in pages {
        // a page that needs router params can only be entered by navigation
        if !p.router_params.is_empty() && !targeted.contains(p.id.as_str()) {
            out.push(Diagnostic::new(
                "unreachable-page",
                format!(
                    "page `{}` takes router params but no page navigates to it",
                    p.id
                ),
            ));
        }
    }

    let reach: BTreeMap<&str, BTreeSet<&str>> = links
        .keys()
        .map(|&start| {
            let mut seen = BTreeSet::new();
            let mut stack: Vec<&str> = links[start].iter().copied().collect();
            while let Some(n) = stack.pop() {
                if seen.insert(n) {
                    stack.extend(links.get(n).into_iter().flatten().copied());
                }
            }
            (start, seen)
        })
        .collect();
    let mut reported: BTreeSet<Vec<&str>> = BTreeSet::new();
    for (&p, r) in &reach {
        if !r.contains(p) {
            continue;
        }
        let component: Vec<&str> = reach
            .iter()
            .filter(|(&q, rq)| rq.contains(p) && r.contains(q))
            .map(|(&q, _)| q)
            .collect();
        if reported.insert(component.clone()) {
            out.push(Diagnostic::new(
                "navigation-cycle",
                format!("pages {} navigate in a cycle", component.join(" -> ")),
            ));
        }
    }
    out
}
