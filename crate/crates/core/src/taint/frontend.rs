use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{FlowFact, PatternKind};
use crate::app::{ApiCall, AppModel, ArgSource, ElementKind, EventAction, PageModel};

/// A returned value that entered a page through a router param.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Origin {
    producer: String,
    field: String,
    patterns: Vec<PatternKind>,
    path: Vec<String>,
}

fn node(page: &PageModel, id: &str) -> String {
    format!("{}#{id}", page.id)
}

/// Frontend edges from producer return fields to consumer params.
///
/// `server` facts decide whether a router-fed endpoint itself produces IDs
/// (`Router2PC`) or only consumes them (`Router2C`).
pub fn frontend_flows(model: &AppModel, server: &[FlowFact]) -> Vec<FlowFact> {
    let producing: BTreeSet<&str> = server
        .iter()
        .filter_map(|f| match f {
            FlowFact::SqlToReturn {
                endpoint, column, ..
            } if model
                .schema()
                .resource_kind(&column.table, &column.column)
                .is_some() =>
            {
                Some(endpoint.as_str())
            }
            _ => None,
        })
        .collect();

    let mut facts = Vec::new();
    let edge = |origin: &Origin,
                call: &ApiCall,
                param: &str,
                last: Option<PatternKind>,
                tail: Vec<String>| {
        let mut patterns = origin.patterns.clone();
        patterns.extend(last);
        let mut path = origin.path.clone();
        path.extend(tail);
        FlowFact::FrontendEdge {
            producer_endpoint: origin.producer.clone(),
            return_field: origin.field.clone(),
            consumer_endpoint: call.endpoint.clone(),
            param: param.to_string(),
            patterns,
            path,
        }
    };

    // Intra-page: response fields into calls and into navigations.
    let mut router_in: BTreeMap<(String, String), BTreeSet<Origin>> = BTreeMap::new();
    let mut queue: VecDeque<(String, String, Origin)> = VecDeque::new();
    for page in model.pages() {
        let origin_of = |call: &str, field: &str| -> Option<Origin> {
            let producer = page.call(call)?;
            Some(Origin {
                producer: producer.endpoint.clone(),
                field: field.to_string(),
                patterns: Vec::new(),
                path: vec![page.id.clone(), node(page, call)],
            })
        };
        for call in &page.on_load {
            for (param, src) in &call.args {
                if let ArgSource::ResponseField { call: from, field } = src {
                    if let Some(o) = origin_of(from, field) {
                        facts.push(edge(
                            &o,
                            call,
                            param,
                            Some(PatternKind::P2C),
                            vec![node(page, &call.id)],
                        ));
                    }
                }
            }
        }
        for el in &page.elements {
            match &el.kind {
                ElementKind::Event(EventAction::Call(call)) => {
                    for (param, src) in &call.args {
                        if let ArgSource::ResponseField { call: from, field } = src {
                            if let Some(o) = origin_of(from, field) {
                                let tail = vec![node(page, &el.id), node(page, &call.id)];
                                facts.push(edge(
                                    &o,
                                    call,
                                    param,
                                    Some(PatternKind::P2Event2C),
                                    tail,
                                ));
                            }
                        }
                    }
                }
                ElementKind::Event(EventAction::Navigate(nav)) | ElementKind::Navigate(nav) => {
                    let pattern = if matches!(el.kind, ElementKind::Navigate(_)) {
                        PatternKind::P2Router
                    } else {
                        PatternKind::P2Event2Router
                    };
                    for (param, src) in &nav.carried {
                        if let ArgSource::ResponseField { call: from, field } = src {
                            if let Some(mut o) = origin_of(from, field) {
                                o.patterns.push(pattern);
                                o.path.push(node(page, &el.id));
                                o.path.push(nav.target_page.clone());
                                queue.push_back((nav.target_page.clone(), param.clone(), o));
                            }
                        }
                    }
                }
            }
        }
    }

    // Cross-page: forward router params through further navigations until
    // nothing new arrives. Origins are keyed without their path so cycles
    // terminate; the first (shortest) path wins.
    let mut seen: BTreeSet<(String, String, String, String, Vec<PatternKind>)> = BTreeSet::new();
    while let Some((page_id, param, origin)) = queue.pop_front() {
        let key = (
            page_id.clone(),
            param.clone(),
            origin.producer.clone(),
            origin.field.clone(),
            origin.patterns.clone(),
        );
        if !seen.insert(key) {
            continue;
        }
        router_in
            .entry((page_id.clone(), param.clone()))
            .or_default()
            .insert(origin.clone());
        let Some(page) = model.page(&page_id) else {
            continue;
        };
        for el in &page.elements {
            let Some(nav) = el.navigation() else { continue };
            for (next_param, src) in &nav.carried {
                if matches!(src, ArgSource::RouterParam(r) if *r == param) {
                    let mut o = origin.clone();
                    o.path.push(node(page, &el.id));
                    o.path.push(nav.target_page.clone());
                    queue.push_back((nav.target_page.clone(), next_param.clone(), o));
                }
            }
        }
    }

    for page in model.pages() {
        for call in page.calls() {
            let pattern = if producing.contains(call.endpoint.as_str()) {
                PatternKind::Router2PC
            } else {
                PatternKind::Router2C
            };
            for (param, src) in &call.args {
                let ArgSource::RouterParam(r) = src else {
                    continue;
                };
                let Some(origins) = router_in.get(&(page.id.clone(), r.clone())) else {
                    continue;
                };
                for o in origins {
                    facts.push(edge(
                        o,
                        call,
                        param,
                        Some(pattern),
                        vec![node(page, &call.id)],
                    ));
                }
            }
        }
    }
    facts.sort();
    facts
}
