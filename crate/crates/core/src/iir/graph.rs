use std::collections::{BTreeMap, BTreeSet};

use super::{IirError, Plan, PlanEdge};

pub(super) fn check_edges(plan: &Plan, ids: &BTreeSet<&str>) -> Result<(), IirError> {
    for e in &plan.edges {
        for end in [e.src(), e.dst()] {
            if !ids.contains(end) {
                return Err(IirError::MalformedPlan(format!("edge endpoint `{end}` is not a node")));
            }
        }
        if let PlanEdge::Depends { src, dst } = e {
            if src == dst {
                return Err(IirError::MalformedPlan(format!("node `{src}` depends on itself")));
            }
        }
    }
    Ok(())
}

fn endpoint_check(plan: &Plan) -> Result<(), IirError> {
    let ids: BTreeSet<&str> = plan.nodes.iter().map(|n| n.id.as_str()).collect();
    if ids.len() != plan.nodes.len() {
        return Err(IirError::MalformedPlan("duplicate node ids".into()));
    }
    check_edges(plan, &ids)
}

/// True iff the `Depends` edges form a DAG. `Connects` edges are ignored.
pub fn check_acyclic(plan: &Plan) -> Result<bool, IirError> {
    endpoint_check(plan)?;
    Ok(kahn(plan).len() == plan.nodes.len())
}

/// A linear extension of the `Depends` order (dependencies first), ties broken by id.
pub fn topological_order(plan: &Plan) -> Result<Vec<String>, IirError> {
    endpoint_check(plan)?;
    let order = kahn(plan);
    if order.len() != plan.nodes.len() {
        return Err(IirError::MalformedPlan("depends edges contain a cycle".into()));
    }
    Ok(order)
}

fn kahn(plan: &Plan) -> Vec<String> {
    // Depends(src, dst): dst must come before src.
    let mut pending: BTreeMap<&str, usize> = plan.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
    let mut dependents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for e in &plan.edges {
        if let PlanEdge::Depends { src, dst } = e {
            if seen.insert((src.as_str(), dst.as_str())) {
                *pending.get_mut(src.as_str()).expect("checked endpoint") += 1;
                dependents.entry(dst.as_str()).or_default().push(src.as_str());
            }
        }
    }
    let mut ready: BTreeSet<&str> = pending.iter().filter(|(_, c)| **c == 0).map(|(id, _)| *id).collect();
    let mut order = Vec::with_capacity(plan.nodes.len());
    while let Some(id) = ready.pop_first() {
        order.push(id.to_owned());
        for d in dependents.get(id).into_iter().flatten() {
            let c = pending.get_mut(d).expect("known node");
            *c -= 1;
            if *c == 0 {
                ready.insert(d);
            }
        }
    }
    order
}
