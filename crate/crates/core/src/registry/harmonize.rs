use std::collections::BTreeSet;

use crate::iir::{Plan, PlanEdge, Protocol, TypedValue, META_PROVIDER_VERSION};

use super::{RegistryError, SchemaRegistry, CONNECTION_SOURCE};

/// Instantiates a plan against the registry: provider resolution, region check,
/// version pins, effect realization, default expansion, reference completion.
///
/// Residual typing violations are left in place for `validate_types` to report.
pub fn harmonize(plan: &Plan, registry: &SchemaRegistry) -> Result<Plan, RegistryError> {
    plan.check_well_formed().map_err(|e| RegistryError::MalformedPlan(e.to_string()))?;
    let mut out = plan.clone();
    for i in 0..out.nodes.len() {
        let (id, kind) = (out.nodes[i].id.clone(), out.nodes[i].kind.clone());
        let schema = registry.kind(&kind).ok_or_else(|| RegistryError::UnknownKind { node: id.clone(), kind: kind.clone() })?;
        let node = &mut out.nodes[i];
        if node.provider.is_empty() {
            node.provider = schema.provider.clone();
        } else if node.provider != schema.provider {
            return Err(RegistryError::UnknownKind { node: id, kind: format!("{}/{kind}", node.provider) });
        }
        if !schema.regions.contains(&node.region) {
            return Err(RegistryError::RegionUnavailable { node: id, kind, region: node.region.clone() });
        }
        match node.meta.get(META_PROVIDER_VERSION) {
            Some(pin) if *pin != schema.version => {
                return Err(RegistryError::VersionConflict { node: id, pinned: pin.clone(), available: schema.version.clone() })
            }
            Some(_) => {}
            None => {
                node.meta.insert(META_PROVIDER_VERSION.to_owned(), schema.version.clone());
            }
        }
        for effect in node.effects.clone() {
            if let Some(r) = schema.effects.get(&effect) {
                node.fields.insert(r.field.clone(), r.value.clone());
            }
        }
        for d in &schema.fields {
            if let (false, Some(v)) = (node.fields.contains_key(&d.name), &d.default) {
                node.fields.insert(d.name.clone(), v.clone());
            }
        }
    }
    extract_connections(&mut out, registry);
    complete_references(&mut out, registry);
    let mut implied = Vec::new();
    for n in &out.nodes {
        for v in n.fields.values() {
            for r in v.references() {
                if r.target != n.id && out.node(&r.target).is_some() {
                    implied.push(PlanEdge::depends(n.id.clone(), r.target.clone()));
                }
            }
        }
    }
    for e in implied {
        out.add_edge(e);
    }
    Ok(out)
}

/// Rule entries carrying only protocol, port and a source reference are
/// connections; they become `Connects` edges, matching how HCL rule blocks lift.
fn extract_connections(plan: &mut Plan, registry: &SchemaRegistry) {
    let ids: BTreeSet<String> = plan.nodes.iter().map(|n| n.id.clone()).collect();
    let mut edges = Vec::new();
    for n in &mut plan.nodes {
        let Some(schema) = registry.kind(&n.kind) else { continue };
        for d in schema.block_fields() {
            let Some(TypedValue::List(entries)) = n.fields.get_mut(&d.name) else { continue };
            entries.retain(|e| match connection(e, &n.id, &ids) {
                Some(edge) => {
                    edges.push(edge);
                    false
                }
                None => true,
            });
        }
    }
    for e in edges {
        plan.add_edge(e);
    }
}

pub(crate) fn connection(entry: &TypedValue, dst: &str, ids: &BTreeSet<String>) -> Option<PlanEdge> {
    let TypedValue::Map(m) = entry else { return None };
    if m.len() != 3 {
        return None;
    }
    let TypedValue::Reference(src) = m.get(CONNECTION_SOURCE)? else { return None };
    let proto: Protocol = m.get("protocol")?.as_str()?.parse().ok()?;
    let port = match m.get("port")? {
        TypedValue::Integer(p) => u16::try_from(*p).ok()?,
        _ => return None,
    };
    (ids.contains(&src.target) && src.target != dst).then(|| PlanEdge::connects(src.target.clone(), dst, proto, port))
}

/// Fills an absent required reference field when exactly one Depends target has the right kind.
fn complete_references(plan: &mut Plan, registry: &SchemaRegistry) {
    let mut fills = Vec::new();
    for n in &plan.nodes {
        let Some(schema) = registry.kind(&n.kind) else { continue };
        for d in schema.required_fields() {
            let Some(Some(target_kind)) = d.reference_kind() else { continue };
            if n.fields.contains_key(&d.name) {
                continue;
            }
            let candidates: Vec<&str> =
                plan.depends_targets(&n.id).into_iter().filter(|t| plan.node(t).is_some_and(|t| t.kind == target_kind)).collect();
            if let [only] = candidates.as_slice() {
                fills.push((n.id.clone(), d.name.clone(), only.to_string()));
            }
        }
    }
    for (node, field, target) in fills {
        if let Some(n) = plan.node_mut(&node) {
            n.fields.insert(field, TypedValue::reference(target, "id"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::iir::{plan_equiv, validate_types, Effect, ResourceNode};

    fn db_plan() -> Plan {
        Plan {
            nodes: vec![
                ResourceNode::new("main", "vpc", "eu-west-1").with_field("cidr_block", TypedValue::str("10.0.0.0/16")),
                ResourceNode::new("a", "subnet", "eu-west-1")
                    .with_field("vpc_id", TypedValue::reference("main", "id"))
                    .with_field("cidr_block", TypedValue::str("10.0.1.0/24")),
                ResourceNode::new("db", "rds", "eu-west-1")
                    .with_field("engine", TypedValue::str("postgres"))
                    .with_effect(Effect::EncryptAtRest),
            ],
            edges: vec![PlanEdge::depends("db", "a")],
            ..Plan::default()
        }
    }

    #[test]
    fn expands_defaults_and_realizes_effects() {
        let r = fixtures::registry();
        let h = harmonize(&db_plan(), &r).unwrap();
        let db = h.node("db").unwrap();
        assert_eq!(db.fields["storage_gb"], TypedValue::Integer(20));
        assert_eq!(db.fields["storage_encrypted"], TypedValue::Bool(true));
        assert_eq!(db.fields["subnet_id"], TypedValue::reference("a", "id"));
        assert_eq!(db.provider, "aws");
        assert_eq!(db.meta[META_PROVIDER_VERSION], "5.40.0");
        assert!(h.has_edge(&PlanEdge::depends("a", "main")));
        assert_eq!(validate_types(&h, &r).unwrap(), vec![]);
    }

    #[test]
    fn idempotent() {
        let r = fixtures::registry();
        let once = harmonize(&db_plan(), &r).unwrap();
        let twice = harmonize(&once, &r).unwrap();
        assert_eq!(once, twice);
        assert!(plan_equiv(&once, &twice, &r));
    }

    #[test]
    fn region_unavailable() {
        let r = fixtures::registry();
        let mut p = db_plan();
        p.nodes.push(ResourceNode::new("web", "ec2", "us-west-2"));
        assert!(matches!(harmonize(&p, &r), Err(RegistryError::RegionUnavailable { .. })));
    }

    #[test]
    fn version_conflict() {
        let r = fixtures::registry();
        let mut p = db_plan();
        p.nodes[0].meta.insert(META_PROVIDER_VERSION.into(), "4.0.0".into());
        assert!(matches!(harmonize(&p, &r), Err(RegistryError::VersionConflict { .. })));
    }

    #[test]
    fn unknown_kind() {
        let r = fixtures::registry();
        let p = Plan { nodes: vec![ResourceNode::new("f", "lambda", "eu-west-1")], ..Plan::default() };
        assert!(matches!(harmonize(&p, &r), Err(RegistryError::UnknownKind { .. })));
    }
}
